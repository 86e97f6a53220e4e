"""Command-line surface.

Verbs: generate, solve, dataset, train, eval, cascade, policy, report.
Exit codes: 0 success, 1 usage error, 2 data/format error, 3 a policy
analysis concluded UNBOUNDED.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from . import io as rio
from .features import default_registry, summary_columns
from .harness import (
    MULTI_INSTANCE,
    SINGLE_INSTANCE,
    ExperimentSpec,
    find_heavy_tail_instance,
    run_experiment,
)
from .latin import HoleSpec, StructureError, generate_complete, poke_holes, validate
from .learn import (
    DecisionTreeModel,
    cascade_datasets,
    evaluate,
    marginal_model,
    tune_kappa,
)
from .policy import (
    DynamicPolicy,
    FixedPolicy,
    LubyPolicy,
    ModelPredictor,
    RtdSource,
    DatasetSource,
    SyntheticPredictor,
    expected_time_fixed,
    is_unbounded,
    optimal_fixed_cutoff,
    scan_dynamic_limits,
    simulate_policy,
)
from .seeds import derive_seed
from .solver import ALLDIFF_REGIN, FORWARD_CHECK, SolverConfig, solve

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_UNBOUNDED = 3


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1, leaving 2 for data errors
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


def _float_list(text: str) -> List[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from exc


def _parse_policy(text: str):
    kind, _, rest = text.partition(":")
    try:
        if kind == "fixed":
            return FixedPolicy(cutoff=int(rest))
        if kind == "luby":
            return LubyPolicy(scale=int(rest) if rest else 1)
        if kind == "dynamic":
            o_str, _, l_str = rest.partition(",")
            limit = math.inf if l_str.strip() in ("inf", "") else float(int(l_str))
            return DynamicPolicy(observe=int(o_str), limit=limit)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad policy spec {text!r}: {exc}") from exc
    raise argparse.ArgumentTypeError(
        f"unknown policy {text!r}; use fixed:C, luby:S, or dynamic:O,L"
    )


def _hole_spec(args) -> Optional[HoleSpec]:
    if args.holes is None:
        return None
    if args.balanced:
        if args.holes % args.order:
            raise ValueError(
                f"balanced holes must divide evenly: {args.holes} over order {args.order}"
            )
        return HoleSpec.balanced(args.holes // args.order)
    return HoleSpec.unbalanced(args.holes)


def _clean(v):
    if v is None or isinstance(v, (int, float, str, bool)):
        return v
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if hasattr(v, "describe"):
        return v.describe()
    return str(v)


def _echo(args: Dict) -> Dict:
    """Invocation parameters for file headers; drops run-machinery knobs so
    outputs stay byte-identical across worker counts."""
    out = {}
    for k, v in args.items():
        if k in ("func", "threads") or v is None:
            continue
        out[k] = _clean(v)
    return out


# -- verbs -------------------------------------------------------------------


def _cmd_generate(args) -> int:
    square = generate_complete(args.order, seed=args.seed)
    spec = _hole_spec(args)
    if spec is not None and (spec.total_holes or spec.holes_per_line):
        square = poke_holes(square, spec, seed=derive_seed(args.seed, "mask"))
    rio.write_instance(args.output, square, params=_echo(vars(args)), master_seed=args.seed)
    print(f"wrote {args.output}: order {square.order}, {square.hole_count()} holes")
    return EXIT_OK


def _cmd_solve(args) -> int:
    instance = rio.read_instance(args.instance)
    if validate(instance):
        raise rio.DataFormatError(f"{args.instance}: rows/columns repeat a symbol")
    config = SolverConfig(
        cutoff=args.cutoff,
        propagation=args.propagation,
        horizon=args.horizon,
        trace_enabled=False,
    )
    rec = solve(instance, config, seed=args.seed)
    print(
        f"{rec.outcome} choice_points={rec.choice_points}"
        f" post_propagation_size={rec.post_propagation_size}"
        + (" exhausted" if rec.exhausted else "")
    )
    if args.output:
        rio.write_report(
            args.output,
            {
                "outcome": rec.outcome,
                "choice_points": rec.choice_points,
                "post_propagation_size": rec.post_propagation_size,
                "exhausted": rec.exhausted,
                "solution": None
                if rec.assignment is None
                else [list(row) for row in rec.assignment.cells],
            },
            params=_echo(vars(args)),
            master_seed=args.seed,
        )
    return EXIT_OK


def _cmd_dataset(args) -> int:
    instance = None
    if args.holes is None and not args.instance:
        # desk-scale default: order 18 with 7 holes per line
        args.holes = 7 * args.order
        args.balanced = True
    holes = _hole_spec(args)
    if args.instance:
        instance = rio.read_instance(args.instance)
        holes = None
    mode = MULTI_INSTANCE if args.mode == "multi" else SINGLE_INSTANCE
    if args.peak_search:
        if holes is None:
            raise ValueError("--peak-search needs --order/--holes, not a fixed instance file")
        instance, info = find_heavy_tail_instance(
            args.order,
            holes,
            master_seed=args.seed,
            probe_runs=args.probe_runs,
            ratio=args.tail_ratio,
            cutoff=args.cutoff or 30000,
            propagation=args.propagation,
            horizon=args.horizon,
        )
        if instance is None:
            raise rio.DataFormatError(
                "peak search found no heavy-tailed instance within "
                f"{len(info['trials'])} candidates"
            )
        print(
            f"peak search: candidate {info['chosen']} "
            f"median {info['median']:.0f}, max/median {info['ratio']:.1f}"
        )
    spec = ExperimentSpec(
        mode=mode,
        order=args.order,
        holes=holes if instance is None else None,
        instance=instance,
        train_runs=args.runs,
        test_runs=args.test_runs,
        horizon=args.horizon,
        cutoff=args.cutoff,
        propagation=args.propagation,
        master_seed=args.seed,
    )
    prefix = args.out_prefix
    train_path = f"{prefix}_train.csv"
    test_path = f"{prefix}_test.csv" if args.test_runs else None
    rtd_path = f"{prefix}_rtd.txt"
    train, test, rtd, info = run_experiment(
        spec,
        threads=args.threads,
        train_path=train_path,
        test_path=test_path,
        rtd_path=rtd_path,
        params=_echo(vars(args)),
    )
    tc, sc = info["train"], info["test"]
    print(
        f"train: {tc['rows']} rows ({tc['under_horizon']} under horizon,"
        f" {tc['cutoff_hit']} cutoff) of {tc['total']} runs; median {info['median']:g}"
    )
    if test is not None:
        print(
            f"test:  {sc['rows']} rows ({sc['under_horizon']} under horizon,"
            f" {sc['cutoff_hit']} cutoff) of {sc['total']} runs"
        )
    print(f"distribution: {info['rtd_size']} solved lengths -> {rtd_path}")
    return EXIT_OK


def _known_schemas() -> List[List[str]]:
    return [
        summary_columns(default_registry(True)),
        summary_columns(default_registry(False)),
    ]


def _cmd_train(args) -> int:
    ds = rio.read_dataset(args.train)
    if ds.columns not in _known_schemas():
        raise rio.DataFormatError(
            f"{args.train}: column schema does not match the feature registry"
        )
    usable = ds.subset(~ds.censored)
    result = tune_kappa(
        usable.X,
        usable.is_short,
        grid=tuple(args.kappa_grid),
        seed=args.seed,
        columns=ds.columns,
    )
    model = result.model
    model.training_median = ds.median
    model.registry_hash = ds.provenance.get("meta", {}).get("registry_hash")
    rio.write_model(
        args.output,
        model,
        params=_echo(vars(args)),
        master_seed=args.seed,
        extra={
            "kappa_grid": list(args.kappa_grid),
            "holdout_scores": {repr(k): v for k, v in result.holdout_scores.items()},
            "holdout_accuracy": result.holdout_accuracy,
            "split_seed": result.split_seed,
            "training_rows": usable.size,
        },
    )
    print(
        f"kappa {model.kappa:g} -> {model.leaf_count} leaves"
        f" (holdout accuracy {result.holdout_accuracy:.3f}); wrote {args.output}"
    )
    if args.report:
        rio.write_report(
            args.report,
            {
                "kappa": model.kappa,
                "leaf_count": model.leaf_count,
                "holdout_scores": {repr(k): v for k, v in result.holdout_scores.items()},
                "holdout_accuracy": result.holdout_accuracy,
                "training_rows": usable.size,
            },
            params=_echo(vars(args)),
            master_seed=args.seed,
        )
    return EXIT_OK


def _eval_pair(model: DecisionTreeModel, test) -> Dict:
    learned = evaluate(model, test.X, test.is_short)
    ns, nl = model.training_counts
    base = marginal_model(np.r_[np.ones(ns, bool), np.zeros(nl, bool)])
    marginal = evaluate(base, test.X, test.is_short)
    return {
        "test_rows": learned.size,
        "model": asdict(learned),
        "marginal": asdict(marginal),
    }


def _cmd_eval(args) -> int:
    model = rio.read_model(args.model)
    test = rio.read_dataset(args.test)
    if model.columns and model.columns != test.columns:
        raise rio.DataFormatError("model and dataset disagree on feature columns")
    usable = test.subset(~test.censored)
    report = _eval_pair(model, usable)
    print(
        f"model: accuracy {report['model']['accuracy']:.3f},"
        f" log score {report['model']['avg_log_score']:.4f}"
    )
    print(
        f"marginal: accuracy {report['marginal']['accuracy']:.3f},"
        f" log score {report['marginal']['avg_log_score']:.4f}"
    )
    if args.output:
        rio.write_report(args.output, report, params=_echo(vars(args)))
    return EXIT_OK


def _cmd_cascade(args) -> int:
    if not args.thresholds:
        raise ValueError("need at least one threshold")
    if sorted(args.thresholds) != list(args.thresholds):
        raise ValueError("thresholds must be ascending")
    train = rio.read_dataset(args.train)
    test = rio.read_dataset(args.test)
    train_u = train.subset(~train.censored)
    test_u = test.subset(~test.censored)
    horizon = train.provenance.get("meta", {}).get("horizon")
    if horizon is not None and args.thresholds[0] < horizon:
        raise ValueError(f"thresholds start below the horizon {horizon}")
    stages = cascade_datasets(train_u, args.thresholds, min_rows=args.min_rows)
    rows = []
    for i, stage in enumerate(stages):
        if stage.skipped:
            rows.append({"threshold": stage.threshold, "skipped": True, "reason": stage.reason})
            print(f"t={stage.threshold:g}: skipped ({stage.reason})")
            continue
        sub = stage.dataset
        result = tune_kappa(
            sub.X,
            sub.is_short,
            grid=tuple(args.kappa_grid),
            seed=derive_seed(args.seed, "cascade", i),
            columns=sub.columns,
        )
        sub_test = test_u.subset(test_u.runtime > stage.threshold).relabeled(sub.median)
        entry = {
            "threshold": stage.threshold,
            "skipped": False,
            "train_rows": sub.size,
            "median": sub.median,
            "kappa": result.kappa,
            "leaf_count": result.model.leaf_count,
        }
        if sub_test.size:
            entry.update(_eval_pair(result.model, sub_test))
            print(
                f"t={stage.threshold:g}: {sub.size} train rows, median {sub.median:g},"
                f" accuracy {entry['model']['accuracy']:.3f}"
                f" (marginal {entry['marginal']['accuracy']:.3f})"
            )
        else:
            entry["test_rows"] = 0
            print(f"t={stage.threshold:g}: {sub.size} train rows, no test rows survive")
        rows.append(entry)
    if args.output:
        rio.write_report(
            args.output, {"stages": rows}, params=_echo(vars(args)), master_seed=args.seed
        )
    return EXIT_OK


def _cmd_policy(args) -> int:
    rtd = rio.read_rtd(args.rtd)
    c_star, c_cost = optimal_fixed_cutoff(rtd)
    report: Dict = {
        "runs": rtd.size,
        "optimal_fixed": {"cutoff": c_star, "expected_steps": c_cost},
    }
    print(f"optimal fixed cutoff {c_star} -> expected {c_cost:.1f} steps")
    model = rio.read_model(args.model) if args.model else None
    dataset = None
    if args.dataset:
        ds = rio.read_dataset(args.dataset)
        dataset = ds.subset(~ds.censored)
    if args.scan_limit is not None:
        if model is not None:
            raise ValueError("--scan-limit uses the synthetic predictor; drop --model")
        scan = scan_dynamic_limits(rtd, args.scan_limit, args.accuracy)
        report["limit_scan"] = {"observe": args.scan_limit, "entries": scan}
        for e in scan[:5]:
            print(
                f"  L={e['limit']}: E(runs)={e['expected_runs']:.3f},"
                f" E(total) <= {e['expected_total_ub']:.1f}"
            )
    results = []
    hit_unbounded = False
    for policy in args.policies or []:
        if isinstance(policy, DynamicPolicy):
            if model is not None:
                if dataset is None:
                    raise ValueError("a model predictor needs --dataset for features")
                if model.columns and model.columns != dataset.columns:
                    raise rio.DataFormatError(
                        "model and dataset disagree on feature columns"
                    )
                policy = DynamicPolicy(
                    observe=policy.observe,
                    limit=policy.limit,
                    predictor=ModelPredictor(model),
                )
                source = DatasetSource(dataset)
            else:
                policy = DynamicPolicy(
                    observe=policy.observe,
                    limit=policy.limit,
                    predictor=SyntheticPredictor(args.accuracy),
                )
                source = RtdSource(rtd)
        else:
            source = RtdSource(rtd)
        stats = simulate_policy(
            source, policy, trials=args.trials, master_seed=args.seed,
            run_budget=args.run_budget,
        )
        entry = asdict(stats)
        if isinstance(policy, FixedPolicy):
            entry["expected_steps"] = expected_time_fixed(rtd, policy.cutoff)
        results.append(entry)
        hit_unbounded = hit_unbounded or stats.unbounded
        mc = "UNBOUNDED" if stats.unbounded else f"{stats.mc_mean_cost:.1f} +- {stats.mc_se_cost:.1f}"
        print(f"{stats.policy}: simulated mean cost {mc} over {stats.trials} trials")
    report["policies"] = results
    if args.output:
        rio.write_report(args.output, report, params=_echo(vars(args)), master_seed=args.seed)
    return EXIT_UNBOUNDED if hit_unbounded else EXIT_OK


def _cmd_report(args) -> int:
    path = args.file
    with open(path, "r", encoding="utf-8") as fh:
        head = fh.read(512)
    if head.lstrip().startswith("{"):
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        kind = obj.get("format", "unknown")
        print(f"{path}: {kind} (tool {obj.get('tool_version')})")
        body = obj.get("report", obj.get("tree"))
        print(json.dumps(rio._jsonable(body), indent=2, sort_keys=True))
        return EXIT_OK
    if "restartlab dataset" in head:
        ds = rio.read_dataset(path)
        meta = ds.provenance.get("meta", {})
        print(
            f"{path}: dataset, {ds.size} rows x {len(ds.columns)} features,"
            f" median {ds.median:g}, censored {int(ds.censored.sum())}"
        )
        for k in ("total", "under_horizon", "rows", "cutoff_hit", "mode", "horizon"):
            if k in meta:
                print(f"  {k}: {meta[k]}")
        return EXIT_OK
    if "restartlab rtd" in head:
        rtd = rio.read_rtd(path)
        q = np.percentile(rtd.lengths, [0, 50, 90, 99, 100])
        print(
            f"{path}: {rtd.size} runs; min {q[0]:.0f}, median {q[1]:.0f},"
            f" p90 {q[2]:.0f}, p99 {q[3]:.0f}, max {q[4]:.0f}"
        )
        return EXIT_OK
    if "restartlab instance" in head or head[:1].isdigit():
        inst = rio.read_instance(path)
        print(f"{path}: order {inst.order}, {inst.hole_count()} holes")
        return EXIT_OK
    raise rio.DataFormatError(f"{path}: unrecognized file")


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="restartlab", description=__doc__)
    p.add_argument("--version", action="version", version=f"restartlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a quasigroup-with-holes instance")
    g.add_argument("--order", type=_positive_int, required=True)
    g.add_argument("--holes", type=int, default=0, help="total holes to punch")
    g.add_argument("--balanced", action="store_true", help="equal holes per row/column")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=_cmd_generate)

    s = sub.add_parser("solve", help="run the randomized solver once")
    s.add_argument("instance")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--cutoff", type=_positive_int, default=None)
    s.add_argument(
        "--propagation", choices=[FORWARD_CHECK, ALLDIFF_REGIN], default=ALLDIFF_REGIN
    )
    s.add_argument("--horizon", type=_positive_int, default=1000)
    s.add_argument("-o", "--output", default=None, help="write a run report")
    s.set_defaults(func=_cmd_solve)

    d = sub.add_parser("dataset", help="generate labeled train/test datasets")
    d.add_argument("--mode", choices=["single", "multi"], default="single")
    d.add_argument("--order", type=_positive_int, default=18)
    d.add_argument("--holes", type=int, default=None, help="total holes (default 126 balanced)")
    d.add_argument("--balanced", action="store_true")
    d.add_argument("--instance", default=None, help="fixed instance file (single mode)")
    d.add_argument("--runs", type=_positive_int, default=1000)
    d.add_argument("--test-runs", type=int, default=300)
    d.add_argument("--horizon", type=_positive_int, default=200)
    d.add_argument("--cutoff", type=_positive_int, default=None, help="safety cap per run")
    d.add_argument(
        "--propagation", choices=[FORWARD_CHECK, ALLDIFF_REGIN], default=FORWARD_CHECK
    )
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--threads", type=_positive_int, default=1)
    d.add_argument("--peak-search", action="store_true",
                   help="scan candidate instances for a heavy-tailed one first")
    d.add_argument("--probe-runs", type=_positive_int, default=60)
    d.add_argument("--tail-ratio", type=float, default=10.0)
    d.add_argument("--out-prefix", required=True)
    d.set_defaults(func=_cmd_dataset)

    t = sub.add_parser("train", help="tune and fit the run-length classifier")
    t.add_argument("train")
    t.add_argument("--kappa-grid", type=_float_list,
                   default=[10.0 ** -k for k in range(1, 9)])
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("-o", "--output", required=True)
    t.add_argument("--report", default=None)
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a model against a test dataset")
    e.add_argument("model")
    e.add_argument("test")
    e.add_argument("-o", "--output", default=None)
    e.set_defaults(func=_cmd_eval)

    c = sub.add_parser("cascade", help="per-threshold conditional models")
    c.add_argument("train")
    c.add_argument("test")
    c.add_argument("--thresholds", type=_float_list, required=True)
    c.add_argument("--kappa-grid", type=_float_list,
                   default=[10.0 ** -k for k in range(1, 9)])
    c.add_argument("--min-rows", type=_positive_int, default=50)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("-o", "--output", default=None)
    c.set_defaults(func=_cmd_cascade)

    po = sub.add_parser("policy", help="compare restart policies on a run-length file")
    po.add_argument("rtd")
    po.add_argument("--policy", dest="policies", action="append", type=_parse_policy,
                    metavar="fixed:C|luby:S|dynamic:O,L")
    po.add_argument("--accuracy", type=float, default=1.0,
                    help="synthetic predictor accuracy for dynamic policies")
    po.add_argument("--trials", type=_positive_int, default=100_000)
    po.add_argument("--run-budget", type=_positive_int, default=1_000_000)
    po.add_argument("--seed", type=int, default=0)
    po.add_argument("--model", default=None, help="model file for a trained predictor")
    po.add_argument("--dataset", default=None, help="dataset supplying predictor features")
    po.add_argument("--scan-limit", type=_positive_int, default=None, metavar="O",
                    help="scan candidate give-up points for this observation point")
    po.add_argument("-o", "--output", default=None)
    po.set_defaults(func=_cmd_policy)

    r = sub.add_parser("report", help="summarize any produced file")
    r.add_argument("file")
    r.set_defaults(func=_cmd_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (rio.DataFormatError, StructureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
