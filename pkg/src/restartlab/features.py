"""Search-state features and run summaries.

The solver snapshots a fixed vector of run-time features at every choice
point.  A finished (or horizon-truncated) trace is then compressed into
summary statistics per feature: initial value, final value, mean, min, max,
plus mean/min/max of the first differences and the number of strict sign
alternations in those differences.  Summaries are what the learner consumes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Dict, List, Sequence, Tuple

import numpy as np

STAT_NAMES: Tuple[str, ...] = (
    "init",
    "final",
    "avg",
    "min",
    "max",
    "d_avg",
    "d_min",
    "d_max",
    "d_signchg",
)

# Magnitude statistics are rescaled in multi-instance mode; the sign-change
# count is an event count and is never rescaled.
_SCALED_STATS = ("init", "final", "avg", "min", "max", "d_avg", "d_min", "d_max")

SECOND_DERIV_STAT_NAMES: Tuple[str, ...] = ("d2_avg", "d2_min", "d2_max", "d2_signchg")
_SCALED_SECOND_STATS = ("d2_avg", "d2_min", "d2_max")


@dataclass(frozen=True)
class FeatureSpec:
    """One base feature: its name, whether it grows with instance size, doc."""

    name: str
    scales_with_size: bool
    doc: str


def default_registry(pooled_line_variance: bool = True) -> Tuple[FeatureSpec, ...]:
    """The ordered base-feature registry.

    With pooled_line_variance (the default) the open-cell counts of all 2n
    rows and columns feed a single variance feature; otherwise rows and
    columns get separate variance features.
    """
    specs: List[FeatureSpec] = [
        FeatureSpec("backtracks", False, "branch assignments undone so far"),
        FeatureSpec("depth", True, "branch assignments currently on the stack"),
        FeatureSpec("max_depth", True, "deepest branch assignment reached so far"),
        FeatureSpec(
            "min_leaf_depth",
            True,
            "shallowest dead end seen so far; current depth before the first dead end",
        ),
        FeatureSpec("avg_node_depth", True, "mean depth over all choice points so far"),
        FeatureSpec("open_cells", True, "unassigned cells"),
        FeatureSpec("avg_domain", False, "mean domain size over open cells"),
        FeatureSpec("min_domain", False, "smallest domain over open cells"),
        FeatureSpec("domain_total", True, "summed domain sizes over open cells"),
    ]
    if pooled_line_variance:
        specs.append(
            FeatureSpec(
                "line_var",
                True,
                "population variance of open-cell counts over all 2n lines",
            )
        )
    else:
        specs.append(
            FeatureSpec(
                "row_var", True, "population variance of open-cell counts over rows"
            )
        )
        specs.append(
            FeatureSpec(
                "col_var", True, "population variance of open-cell counts over columns"
            )
        )
    specs.extend(
        [
            FeatureSpec("open_per_line", True, "open cells divided by the order"),
            FeatureSpec(
                "forced_assignments", True, "cells assigned by propagation so far"
            ),
            FeatureSpec(
                "alldiff_prunings", True, "values removed by matching filtering so far"
            ),
            FeatureSpec("contradictions", False, "dead ends hit so far"),
        ]
    )
    return tuple(specs)


REGISTRY: Tuple[FeatureSpec, ...] = default_registry()


def registry_hash(registry: Sequence[FeatureSpec] = REGISTRY) -> str:
    """Stable fingerprint of a registry: feature names, flags, stat names."""
    h = hashlib.blake2b(digest_size=16)
    for spec in registry:
        h.update(f"{spec.name}:{int(spec.scales_with_size)};".encode("ascii"))
    h.update("|".join(STAT_NAMES).encode("ascii"))
    return h.hexdigest()


def summary_columns(
    registry: Sequence[FeatureSpec] = REGISTRY, second_derivatives: bool = False
) -> List[str]:
    """Column names, feature-major: <feature>__<stat>."""
    cols = [f"{spec.name}__{stat}" for spec in registry for stat in STAT_NAMES]
    if second_derivatives:
        cols += [
            f"{spec.name}__{stat}"
            for spec in registry
            for stat in SECOND_DERIV_STAT_NAMES
        ]
    return cols


def snapshot(state, pooled_line_variance: bool = True) -> Tuple[float, ...]:
    """Read the base feature vector off a live search state.

    Called by the solver once per choice point, after propagation and before
    the branch assignment.  The state object must expose the solver's public
    counters (see solver.SearchState).
    """
    n = state.n
    symbol = state.symbol
    domain = state.domain
    open_cells = 0
    total_dom = 0
    min_dom = n + 1
    for c in state.hole_cells:
        if symbol[c] == 0:
            d = domain[c].bit_count()
            open_cells += 1
            total_dom += d
            if d < min_dom:
                min_dom = d
    if open_cells:
        avg_dom = total_dom / open_cells
    else:
        avg_dom = 0.0
        min_dom = 0
    lu = state.line_unassigned
    depth = state.depth
    if state.min_leaf_depth is None:
        min_leaf = depth
    else:
        min_leaf = state.min_leaf_depth
    if state.node_visits:
        avg_node_depth = state.node_depth_sum / state.node_visits
    else:
        avg_node_depth = float(depth)
    base = [
        float(state.backtracks),
        float(depth),
        float(state.max_depth),
        float(min_leaf),
        float(avg_node_depth),
        float(open_cells),
        float(avg_dom),
        float(min_dom),
        float(total_dom),
    ]
    if pooled_line_variance:
        base.append(_population_variance(lu))
    else:
        base.append(_population_variance(lu[:n]))
        base.append(_population_variance(lu[n:]))
    base.extend(
        [
            open_cells / n,
            float(state.forced_assignments),
            float(state.alldiff_prunings),
            float(state.contradictions),
        ]
    )
    return tuple(base)


def _population_variance(xs: Sequence[int]) -> float:
    m = len(xs)
    if m == 0:
        return 0.0
    mean = sum(xs) / m
    return sum((x - mean) ** 2 for x in xs) / m


@dataclass(frozen=True)
class SummaryVector:
    """Summary statistics of one run's trace, keyed by column name.

    divisor records the instance-size normalization applied in multi-instance
    mode; 1.0 means raw values.
    """

    values: Dict[str, float]
    censored: bool = False
    divisor: float = 1.0


def summarize(
    trace: Sequence[Sequence[float]],
    horizon: int,
    registry: Sequence[FeatureSpec] = REGISTRY,
    second_derivatives: bool = False,
    censored: bool = False,
) -> SummaryVector:
    """Compress a trace into per-feature summary statistics.

    Only the first min(horizon, len(trace)) entries are used, so a summary is
    unchanged by anything the run did after the observation horizon.  Traces
    shorter than 2 entries have no differences and are rejected.
    """
    if horizon < 2:
        raise ValueError(f"horizon must be >= 2, got {horizon}")
    m = min(horizon, len(trace))
    if m < 2:
        raise ValueError(f"need at least 2 trace entries, got {len(trace)}")
    arr = np.asarray(trace[:m], dtype=float)
    if arr.ndim != 2 or arr.shape[1] != len(registry):
        raise ValueError(
            f"trace width {arr.shape} does not match registry of {len(registry)}"
        )
    diffs = np.diff(arr, axis=0)
    stats = {
        "init": arr[0],
        "final": arr[-1],
        "avg": arr.mean(axis=0),
        "min": arr.min(axis=0),
        "max": arr.max(axis=0),
        "d_avg": diffs.mean(axis=0),
        "d_min": diffs.min(axis=0),
        "d_max": diffs.max(axis=0),
        "d_signchg": _sign_changes(diffs),
    }
    values: Dict[str, float] = {}
    for j, spec in enumerate(registry):
        for stat in STAT_NAMES:
            values[f"{spec.name}__{stat}"] = float(stats[stat][j])
    if second_derivatives:
        if m < 3:
            d2 = np.zeros((0, arr.shape[1]))
        else:
            d2 = np.diff(diffs, axis=0)
        second = {
            "d2_avg": d2.mean(axis=0) if d2.size else np.zeros(arr.shape[1]),
            "d2_min": d2.min(axis=0) if d2.size else np.zeros(arr.shape[1]),
            "d2_max": d2.max(axis=0) if d2.size else np.zeros(arr.shape[1]),
            "d2_signchg": _sign_changes(d2),
        }
        for j, spec in enumerate(registry):
            for stat in SECOND_DERIV_STAT_NAMES:
                values[f"{spec.name}__{stat}"] = float(second[stat][j])
    return SummaryVector(values=values, censored=censored, divisor=1.0)


def _sign_changes(diffs: np.ndarray) -> np.ndarray:
    """Count strict sign alternations column-wise; zeros never count."""
    if diffs.shape[0] < 2:
        return np.zeros(diffs.shape[1])
    signs = np.sign(diffs)
    return (signs[1:] * signs[:-1] < 0).sum(axis=0).astype(float)


def normalize_for_multi(
    summary: SummaryVector,
    post_propagation_size: int,
    registry: Sequence[FeatureSpec] = REGISTRY,
) -> SummaryVector:
    """Divide size-scale magnitude statistics by the post-propagation size.

    Makes summaries comparable across instances of different effective size.
    Sign-change counts are left untouched, as are features whose registry
    flag marks them size-free.  The divisor is recorded on the result.
    """
    if post_propagation_size < 1:
        raise ValueError(
            f"post_propagation_size must be >= 1, got {post_propagation_size}"
        )
    div = float(post_propagation_size)
    values = dict(summary.values)
    for spec in registry:
        if not spec.scales_with_size:
            continue
        for stat in _SCALED_STATS:
            key = f"{spec.name}__{stat}"
            if key in values:
                values[key] = values[key] / div
        for stat in _SCALED_SECOND_STATS:
            key = f"{spec.name}__{stat}"
            if key in values:
                values[key] = values[key] / div
    return SummaryVector(values=values, censored=summary.censored, divisor=div)
