"""Command line interface: analyze a dataset, run a scenario, predict power.

Exit codes: 0 on success, 2 for usage or validation problems (bad flags,
malformed data or configs), 1 for unexpected internal failures.  All output
is deterministic given the seed; when no seed is supplied via --seed or the
CASANOVA_SEED environment variable, one is drawn from OS entropy and printed
with the results so the run can be reproduced.
"""

from __future__ import annotations

import argparse
import json
import os
import secrets
import sys
from importlib import resources

from . import __version__
from .counting import build_processes
from .errors import CasanovaError
from .linalg import contrast
from .permutation import JOINT, PermutationPlan, permutation_test_views
from .simulate import ScenarioConfig, run_scenario
from .statistic import asymptotic_test
from .survdata import load_csv, validate
from .theory import LocalAlternative, PopulationConfig, predicted_power
from .weights import WeightSet, default_weights, parse_weight_set

TIE_CONVENTION = "tied-censored-at-risk"


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get("CASANOVA_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise CasanovaError(f"CASANOVA_SEED must be an integer, got {env!r}")
    return secrets.randbits(63)


def _default_effects(factor_cols) -> list[str]:
    if len(factor_cols) <= 1:
        return ["oneway"]
    effects = [f"main:{name}" for name in factor_cols]
    effects.append("interaction:" + ",".join(factor_cols))
    return effects


def analyze(
    ds,
    effects,
    ws,
    nperm: int,
    seed: int,
    alpha: float,
    threads: int | None = None,
    mode: str = "monte_carlo",
) -> dict:
    """Run asymptotic and permutation tests for each effect; returns a dict."""
    report = validate(ds)
    layout_arg = ds.layout if len(ds.layout.factors) > 1 else ds.k
    single_sets = {}
    if len(ws) >= 2:
        for i, label in enumerate(ws.labels):
            single_sets[label] = WeightSet((ws.weights[i],), independence_checked=True)
    sp = build_processes(ds)
    results = []
    for effect in effects:
        hyp = contrast(layout_arg, effect)
        views = {}
        asy = asymptotic_test(ds, hyp, ws, sp=sp)
        views[JOINT] = {
            "statistic": asy.statistic,
            "df": asy.df,
            "p_asymptotic": asy.p_asymptotic,
            "degenerate": asy.degenerate,
        }
        for label, single in single_sets.items():
            one = asymptotic_test(ds, hyp, single, sp=sp)
            views[label] = {
                "statistic": one.statistic,
                "df": one.df,
                "p_asymptotic": one.p_asymptotic,
                "degenerate": one.degenerate,
            }
        if nperm > 0 or mode == "exact":
            plan = PermutationPlan(seed=seed, n_permutations=nperm, mode=mode)
            perm = permutation_test_views(ds, hyp, ws, plan, alpha=alpha, threads=threads)
            for name, pr in perm.items():
                views.setdefault(name, {"statistic": pr.statistic, "df": pr.df})
                views[name].update(
                    p_permutation=pr.p_value,
                    quantile_at_alpha=pr.quantile,
                    n_replicates=pr.n_replicates,
                )
                if name == JOINT:
                    views[name]["degenerate_replicates"] = pr.degenerate_count
        results.append({"effect": hyp.effect, "df": hyp.rank, "views": views})
    return {
        "version": __version__,
        "n": ds.n,
        "k": ds.k,
        "factors": [list(f) for f in ds.layout.factors],
        "group_sizes": [int(s) for s in ds.group_sizes],
        "weights": list(ws.labels),
        "nperm": nperm,
        "mode": mode,
        "seed": seed,
        "alpha": alpha,
        "tie_convention": TIE_CONVENTION,
        "warnings": list(report.warnings),
        "results": results,
    }


def _render_test_text(payload: dict, out) -> None:
    print(
        f"n={payload['n']}  k={payload['k']}  "
        f"factors: {', '.join(f'{n}({l})' for n, l in payload['factors'])}",
        file=out,
    )
    print(
        f"weights: {', '.join(payload['weights'])}   "
        f"nperm={payload['nperm']} ({payload['mode']})  "
        f"seed={payload['seed']}  alpha={payload['alpha']}",
        file=out,
    )
    print(f"tie convention: {payload['tie_convention']}", file=out)
    for w in payload["warnings"]:
        print(f"warning: {w}", file=out)
    for block in payload["results"]:
        print(f"\neffect: {block['effect']}", file=out)
        header = f"  {'view':<14}{'statistic':>12}{'df':>4}{'p_asy':>10}{'p_perm':>10}"
        print(header, file=out)
        for name, view in block["views"].items():
            p_asy = view.get("p_asymptotic")
            p_perm = view.get("p_permutation")
            print(
                "  "
                + f"{name:<14}"
                + f"{view['statistic']:>12.4f}"
                + f"{view['df']:>4}"
                + (f"{p_asy:>10.4f}" if p_asy is not None else f"{'-':>10}")
                + (f"{p_perm:>10.4f}" if p_perm is not None else f"{'-':>10}"),
                file=out,
            )


def cmd_test(args) -> int:
    factor_cols = [c.strip() for c in args.factors.split(",") if c.strip()]
    if not factor_cols:
        raise CasanovaError("--factors needs at least one column name")
    status_values = None
    if args.status_values:
        parts = [p.strip() for p in args.status_values.split(",")]
        if len(parts) != 2:
            raise CasanovaError("--status-values needs two labels: event,censored")
        status_values = (parts[0], parts[1])
    ds = load_csv(args.data, args.time, args.status, factor_cols, status_values)
    ws = parse_weight_set(args.weights) if args.weights else default_weights()
    effects = args.effect if args.effect else _default_effects(factor_cols)
    seed = _resolve_seed(args.seed)
    mode = "exact" if args.exact else "monte_carlo"
    payload = analyze(
        ds,
        effects,
        ws,
        nperm=args.nperm,
        seed=seed,
        alpha=args.alpha,
        threads=args.threads,
        mode=mode,
    )
    payload["command"] = "test"
    payload["data"] = args.data
    if args.format == "json":
        json.dump(payload, sys.stdout, indent=2)
        print()
    else:
        _render_test_text(payload, sys.stdout)
    return 0


def _find_scenario(token: str) -> ScenarioConfig:
    if os.path.exists(token):
        return ScenarioConfig.from_json(token)
    bundled = resources.files("casanova").joinpath(f"scenarios/{token}.json")
    if bundled.is_file():
        return ScenarioConfig.from_dict(json.loads(bundled.read_text()))
    raise CasanovaError(f"scenario {token!r}: no such file or bundled scenario")


def cmd_simulate(args) -> int:
    cfg = _find_scenario(args.scenario)
    if args.seed is not None or os.environ.get("CASANOVA_SEED"):
        from .simulate import scaled

        cfg = scaled(cfg, seed=_resolve_seed(args.seed))

    def progress(done, total):
        print(f"\r{cfg.name}: {done}/{total} replicates", end="", file=sys.stderr)
        if done == total:
            print(file=sys.stderr)

    table = run_scenario(cfg, threads=args.threads, progress=progress)
    text = (
        json.dumps(table.to_dict(), indent=2) + "\n"
        if args.format == "json"
        else table.format_text() + "\n"
    )
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_power(args) -> int:
    with open(args.config) as fh:
        spec = json.load(fh)
    cfg = PopulationConfig.from_dict(spec)
    alt = LocalAlternative.from_dict(spec)
    tokens = spec.get("weights")
    ws = parse_weight_set(tokens) if tokens else default_weights()
    effect = spec.get("effect", "oneway")
    design = spec.get("design")
    if design and design.get("type") == "factorial":
        from .survdata import FactorialLayout

        factors = tuple((str(n), int(l)) for n, l in design["factors"])
        layout = FactorialLayout(
            factors=factors,
            levels=tuple(tuple(str(i + 1) for i in range(l)) for _, l in factors),
        )
        hyp = contrast(layout, effect)
    else:
        hyp = contrast(cfg.k, effect)
    alpha = float(spec.get("alpha", 0.05))
    resolution = int(spec.get("resolution", 2048))
    pred = predicted_power(cfg, alt, ws, hyp, alpha=alpha, resolution=resolution)
    if args.format == "json":
        json.dump(
            {
                "version": __version__,
                "command": "power",
                "effect": hyp.effect,
                "weights": list(ws.labels),
                "alpha": pred.alpha,
                "noncentrality": pred.delta,
                "df": pred.df,
                "critical_value": pred.critical_value,
                "power": pred.power,
            },
            sys.stdout,
            indent=2,
        )
        print()
    else:
        print(f"effect: {hyp.effect}   weights: {', '.join(ws.labels)}")
        print(f"noncentrality delta = {pred.delta:.6f}")
        print(f"degrees of freedom  = {pred.df}")
        print(f"alpha = {pred.alpha}   chi-square critical value = {pred.critical_value:.6f}")
        print(f"predicted asymptotic power = {pred.power:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="casanova",
        description=(
            "Joint weighted tests for factorial survival designs: "
            "asymptotic and permutation inference, simulation studies, "
            "asymptotic power prediction."
        ),
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="test effects in a right-censored dataset")
    t.add_argument("--data", required=True, help="CSV file with one row per subject")
    t.add_argument("--time", default="time", help="time column name")
    t.add_argument("--status", default="status", help="status column name (1=event, 0=censored)")
    t.add_argument(
        "--factors",
        default="group",
        help="comma-separated factor column names; one column means a one-way design",
    )
    t.add_argument(
        "--effect",
        action="append",
        help="effect to test: oneway | main:<f> | interaction:<f,g>; "
        "repeatable, defaults to all main effects plus the full interaction",
    )
    t.add_argument(
        "--weights",
        action="append",
        help="weight spec fh:<r>:<g> or poly:<c0>,<c1>,...; repeatable, "
        "defaults to fh:0:0 plus poly:1,-2",
    )
    t.add_argument("--nperm", type=int, default=1999, help="permutation replicates (0 disables)")
    t.add_argument(
        "--exact",
        action="store_true",
        help="enumerate all distinct relabelings instead of sampling",
    )
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--format", choices=("text", "json"), default="text")
    t.add_argument("--threads", type=int, default=None)
    t.add_argument(
        "--status-values",
        default=None,
        help="textual status labels as event,censored (e.g. dead,alive)",
    )
    t.set_defaults(func=cmd_test)

    s = sub.add_parser("simulate", help="run a simulation scenario")
    s.add_argument(
        "--scenario",
        required=True,
        help="scenario JSON path, or the name of a bundled scenario",
    )
    s.add_argument("--threads", type=int, default=None)
    s.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    s.add_argument("--format", choices=("text", "json"), default="text")
    s.add_argument("--out", default=None, help="write results to a file instead of stdout")
    s.set_defaults(func=cmd_simulate)

    p = sub.add_parser("power", help="predict asymptotic power for a local alternative")
    p.add_argument("--config", required=True, help="population and alternative JSON")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_power)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CasanovaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
