"""Experiment orchestration: seeded run generation, censoring bookkeeping,
labeling, and the command cores behind the CLI.

Runs are seeded per run index from one master seed, so results are
deterministic and independent of worker count or scheduling; workers return
records that are merged by run index before anything downstream happens.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .features import (
    default_registry,
    normalize_for_multi,
    registry_hash,
    summarize,
    summary_columns,
)
from .io import DataFormatError, write_dataset, write_rtd
from .latin import HoleSpec, PartialLatinSquare, generate_complete, poke_holes
from .learn import Dataset, label_by_median
from .policy import EmpiricalRTD
from .seeds import derive_seed
from .solver import FORWARD_CHECK, SOLVED, SolverConfig, solve

SINGLE_INSTANCE = "SINGLE_INSTANCE"
MULTI_INSTANCE = "MULTI_INSTANCE"


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything needed to regenerate a dataset bit for bit."""

    mode: str = SINGLE_INSTANCE
    order: int = 18
    holes: Optional[HoleSpec] = None
    instance: Optional[PartialLatinSquare] = None
    train_runs: int = 1000
    test_runs: int = 300
    horizon: int = 200
    cutoff: Optional[int] = None
    propagation: str = FORWARD_CHECK
    master_seed: int = 0
    pooled_line_variance: bool = True

    def __post_init__(self) -> None:
        if self.mode not in (SINGLE_INSTANCE, MULTI_INSTANCE):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == MULTI_INSTANCE and self.instance is not None:
            raise ValueError("multi-instance mode draws fresh instances; do not fix one")
        if self.instance is None and self.holes is None:
            raise ValueError("need either a fixed instance or hole parameters")
        if self.train_runs < 1:
            raise ValueError("need at least one training run")
        if self.test_runs < 0:
            raise ValueError("test run count cannot be negative")
        if self.horizon < 2:
            raise ValueError("horizon must be >= 2")
        if self.cutoff is not None and self.cutoff < self.horizon:
            raise ValueError("a safety cutoff below the horizon would leave no usable rows")


# One record per launched run; summary is None for runs that finished before
# the horizon (their traces are too short to summarize).
_RunRow = Tuple[int, int, bool, bool, int, Optional[Tuple[float, ...]]]

_WORK: Dict[str, object] = {}


def _init_worker(payload: Dict) -> None:
    _WORK.update(payload)


def _run_one(task: Tuple[int, int]) -> _RunRow:
    """Execute one seeded run; returns (index, runtime, solved, censored_long,
    post_propagation_size, summary values or None)."""
    idx, seed = task
    spec: ExperimentSpec = _WORK["spec"]
    config: SolverConfig = _WORK["config"]
    registry = _WORK["registry"]
    if spec.mode == SINGLE_INSTANCE:
        instance = _WORK["instance"]
    else:
        square = generate_complete(spec.order, derive_seed(spec.master_seed, "inst", idx))
        instance = poke_holes(square, spec.holes, derive_seed(spec.master_seed, "mask", idx))
    rec = solve(instance, config, seed)
    solved = rec.outcome == SOLVED
    if not solved and rec.exhausted:
        raise DataFormatError("instance admits no completion; cannot measure run lengths")
    runtime = rec.choice_points
    if solved and runtime < spec.horizon:
        return (idx, runtime, True, False, rec.post_propagation_size, None)
    sv = summarize(rec.trace, spec.horizon, registry=registry, censored=not solved)
    if spec.mode == MULTI_INSTANCE:
        sv = normalize_for_multi(sv, rec.post_propagation_size, registry=registry)
    values = tuple(sv.values[c] for c in _WORK["columns"])
    return (idx, runtime, solved, not solved, rec.post_propagation_size, values)


def _execute_runs(spec: ExperimentSpec, total: int, threads: int) -> List[_RunRow]:
    config = SolverConfig(
        cutoff=spec.cutoff,
        propagation=spec.propagation,
        horizon=spec.horizon,
        trace_enabled=True,
        pooled_line_variance=spec.pooled_line_variance,
    )
    registry = default_registry(spec.pooled_line_variance)
    columns = summary_columns(registry)
    instance = spec.instance
    if spec.mode == SINGLE_INSTANCE and instance is None:
        square = generate_complete(spec.order, derive_seed(spec.master_seed, "instance"))
        instance = poke_holes(square, spec.holes, derive_seed(spec.master_seed, "mask"))
    payload = {
        "spec": spec,
        "config": config,
        "registry": registry,
        "columns": columns,
        "instance": instance,
    }
    tasks = [(i, derive_seed(spec.master_seed, "run", i)) for i in range(total)]
    if threads <= 1:
        _init_worker(payload)
        rows = [_run_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(
            max_workers=threads, initializer=_init_worker, initargs=(payload,)
        ) as pool:
            chunk = max(1, total // (threads * 8))
            rows = list(pool.map(_run_one, tasks, chunksize=chunk))
    rows.sort(key=lambda r: r[0])
    return rows


def _build_split(
    rows: Sequence[_RunRow],
    columns: List[str],
    median: Optional[float],
    multi: bool,
) -> Tuple[Dataset, Dict[str, int], float]:
    """Assemble one split's Dataset from its run records.

    Runs that finished before the horizon are dropped (their count is
    returned); cutoff-hit runs are kept as censored rows labeled LONG.  The
    median is computed from the uncensored rows' scaled runtimes when not
    supplied (training), else applied as given (test)."""
    kept = [r for r in rows if r[5] is not None]
    under = len(rows) - len(kept)
    if not any(not r[3] for r in kept):
        raise DataFormatError(
            "zero surviving rows after censoring; raise run counts or lower the horizon"
        )
    X = np.asarray([r[5] for r in kept], dtype=float)
    runtime = np.asarray([r[1] for r in kept], dtype=np.int64)
    censored = np.asarray([r[3] for r in kept], dtype=bool)
    divisor = np.asarray(
        [float(r[4]) if multi else 1.0 for r in kept], dtype=float
    )
    scaled = runtime / divisor
    if median is None:
        median, _ = label_by_median(scaled[~censored])
    is_short = (scaled < median) & ~censored
    counts = {
        "total": len(rows),
        "under_horizon": under,
        "rows": int((~censored).sum()),
        "cutoff_hit": int(censored.sum()),
    }
    ds = Dataset(
        columns=list(columns),
        X=X,
        runtime=runtime,
        is_short=is_short,
        censored=censored,
        divisor=divisor,
        median=float(median),
    )
    return ds, counts, float(median)


def run_experiment(
    spec: ExperimentSpec,
    threads: int = 1,
    train_path: Optional[str] = None,
    test_path: Optional[str] = None,
    rtd_path: Optional[str] = None,
    params: Optional[Dict] = None,
) -> Tuple[Dataset, Optional[Dataset], EmpiricalRTD, Dict]:
    """Generate the train/test datasets and the run-length distribution.

    Returns (train, test, rtd, info).  Runs are indexed train first, then
    test; every solved run's length lands in the distribution, while only
    runs that survived the observation horizon become dataset rows.  Test
    labels reuse the training median so both sets share one notion of SHORT.
    """
    total = spec.train_runs + spec.test_runs
    rows = _execute_runs(spec, total, threads)
    registry = default_registry(spec.pooled_line_variance)
    columns = summary_columns(registry)
    multi = spec.mode == MULTI_INSTANCE
    train_rows = rows[: spec.train_runs]
    test_rows = rows[spec.train_runs :]
    train, train_counts, median = _build_split(train_rows, columns, None, multi)
    test = None
    test_counts = {"total": 0, "under_horizon": 0, "rows": 0, "cutoff_hit": 0}
    if spec.test_runs:
        test, test_counts, _ = _build_split(test_rows, columns, median, multi)
    solved_lengths = [r[1] for r in rows if r[2]]
    if not solved_lengths:
        raise DataFormatError("no run solved; nothing to put in the distribution")
    rtd = EmpiricalRTD(solved_lengths)
    info = {
        "mode": spec.mode,
        "horizon": spec.horizon,
        "cutoff": spec.cutoff,
        "registry_hash": registry_hash(registry),
        "median": median,
        "train": train_counts,
        "test": test_counts,
        "rtd_size": rtd.size,
    }
    base = dict(params or {})
    if train_path:
        write_dataset(
            train_path, train, params=base, master_seed=spec.master_seed,
            meta={"split": "train", **train_counts, "mode": spec.mode,
                  "horizon": spec.horizon, "registry_hash": info["registry_hash"]},
        )
    if test_path and test is not None:
        write_dataset(
            test_path, test, params=base, master_seed=spec.master_seed,
            meta={"split": "test", **test_counts, "mode": spec.mode,
                  "horizon": spec.horizon, "registry_hash": info["registry_hash"]},
        )
    if rtd_path:
        write_rtd(
            rtd_path, solved_lengths, params=base, master_seed=spec.master_seed,
            meta={"solved": len(solved_lengths), "total": total},
        )
    return train, test, rtd, info


def find_heavy_tail_instance(
    order: int,
    holes: HoleSpec,
    master_seed: int,
    probe_runs: int = 60,
    ratio: float = 10.0,
    max_candidates: int = 20,
    cutoff: int = 30000,
    propagation: str = FORWARD_CHECK,
    horizon: int = 200,
) -> Tuple[Optional[PartialLatinSquare], Dict]:
    """Search seeded candidate instances for a heavy-tailed one.

    A candidate qualifies when, over probe_runs seeded runs, the longest
    observed length (cutoff-capped) is at least `ratio` times the median and
    the median itself stays above 1 (degenerate instances solve instantly).
    Returns (instance, info) with info recording every candidate's numbers;
    instance is None if no candidate qualifies.
    """
    config = SolverConfig(cutoff=cutoff, propagation=propagation, horizon=horizon)
    trials = []
    for cand in range(max_candidates):
        square = generate_complete(order, derive_seed(master_seed, "peak", cand, "square"))
        inst = poke_holes(square, holes, derive_seed(master_seed, "peak", cand, "mask"))
        lengths = []
        for i in range(probe_runs):
            rec = solve(inst, config, derive_seed(master_seed, "peak", cand, "run", i))
            lengths.append(rec.choice_points)
        med = float(np.median(lengths))
        top = float(max(lengths))
        r = top / med if med >= 1 else 0.0
        trials.append({"candidate": cand, "median": med, "max": top, "ratio": r})
        if med >= 1 and r >= ratio:
            return inst, {"chosen": cand, "ratio": r, "median": med, "trials": trials}
    return None, {"chosen": None, "trials": trials}
