"""Restart policies over empirical run-time distributions.

Heavy-tailed run-time distributions make restarts profitable.  This module
computes the expected cost of fixed-cutoff restarts exactly from an empirical
distribution, provides the Luby universal schedule, and models a dynamic
policy that observes a run for O steps, asks a predictor whether the run
would finish within L steps, and restarts immediately on a LONG prediction.

The dynamic policy's expected number of runs is exact,
    E(N) = 1 / (A * (P_L - P_O) + P_O),
while its per-run cost is bounded above by
    E_ub(R) = O + (L - O) * (A * P_L + (1 - A) * (1 - P_L)),
so E(N) * E_ub(R) bounds the expected total cost.  Impossible configurations
yield the UNBOUNDED value rather than raising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .seeds import derive_seed
from . import learn as _learn

UNBOUNDED = math.inf


def is_unbounded(x: float) -> bool:
    return math.isinf(x) and x > 0


@dataclass(frozen=True)
class EmpiricalRTD:
    """Empirical run-length distribution: sorted lengths with a step CDF."""

    lengths: np.ndarray

    def __init__(self, lengths: Sequence[int]):
        arr = np.sort(np.asarray(lengths, dtype=np.int64))
        if arr.size == 0:
            raise ValueError("an empirical distribution needs at least one run")
        if arr[0] < 0:
            raise ValueError("run lengths cannot be negative")
        object.__setattr__(self, "lengths", arr)
        object.__setattr__(self, "_prefix", np.concatenate(([0], np.cumsum(arr))))

    @property
    def size(self) -> int:
        return int(self.lengths.size)

    @property
    def min_length(self) -> int:
        return int(self.lengths[0])

    @property
    def max_length(self) -> int:
        return int(self.lengths[-1])

    def cdf(self, t: float) -> float:
        """P(T <= t) with a step at every observed length."""
        k = int(np.searchsorted(self.lengths, t, side="right"))
        return k / self.lengths.size

    def expected_truncated(self, c: float) -> float:
        """E[min(T, c)]."""
        k = int(np.searchsorted(self.lengths, c, side="right"))
        n = self.lengths.size
        return float(self._prefix[k] + c * (n - k)) / n


def expected_time_fixed(rtd: EmpiricalRTD, cutoff: int) -> float:
    """Expected total steps of restarting every cutoff steps, from the step CDF.

    Equals E[min(T, c)] / P(T <= c); UNBOUNDED when no observed run finishes
    within the cutoff.
    """
    if cutoff < 1:
        raise ValueError(f"cutoff must be >= 1, got {cutoff}")
    p = rtd.cdf(cutoff)
    if p == 0.0:
        return UNBOUNDED
    return rtd.expected_truncated(cutoff) / p


def optimal_fixed_cutoff(rtd: EmpiricalRTD) -> Tuple[int, float]:
    """Minimize expected_time_fixed over cutoffs; returns (c*, cost).

    Between observed lengths the truncated mean grows while the success
    probability stays flat, so only the distinct observed lengths can be
    optimal; ties resolve to the smallest cutoff.  Zero-length runs (solved
    by propagation alone) shift their candidate to the minimum legal cutoff
    of 1.
    """
    lengths = rtd.lengths
    n = lengths.size
    candidates = np.unique(np.maximum(lengths, 1))
    k = np.searchsorted(lengths, candidates, side="right")
    prefix = np.concatenate(([0], np.cumsum(lengths)))
    emin = (prefix[k] + candidates * (n - k)) / n
    cost = emin / (k / n)
    i = int(np.argmin(cost))  # first minimum: smallest cutoff wins ties
    return int(candidates[i]), float(cost[i])


def luby_term(i: int) -> int:
    """The i-th term (1-based) of the Luby restart sequence 1,1,2,1,1,2,4,..."""
    if i < 1:
        raise ValueError(f"index must be >= 1, got {i}")
    while True:
        k = i.bit_length()
        if i == (1 << k) - 1:
            return 1 << (k - 1)
        i = i - (1 << (k - 1)) + 1


def dynamic_expected_runs(accuracy: float, p_obs: float, p_limit: float) -> float:
    """Exact expected number of runs of the observe-then-predict policy."""
    _check_prob(accuracy, "accuracy")
    _check_prob(p_obs, "p_obs")
    _check_prob(p_limit, "p_limit")
    if p_limit < p_obs:
        raise ValueError("p_limit must be >= p_obs (L is past O)")
    denom = accuracy * (p_limit - p_obs) + p_obs
    if denom == 0.0:
        return UNBOUNDED
    return 1.0 / denom


def dynamic_expected_run_length_ub(
    observe: float, limit: float, accuracy: float, p_limit: float
) -> float:
    """Upper bound on the expected steps spent in a single (possibly
    restarted) run of the dynamic policy."""
    _check_prob(accuracy, "accuracy")
    _check_prob(p_limit, "p_limit")
    if not observe < limit:
        raise ValueError("need observe < limit")
    cont = accuracy * p_limit + (1.0 - accuracy) * (1.0 - p_limit)
    if math.isinf(limit):
        return UNBOUNDED if cont > 0 else float(observe)
    return observe + (limit - observe) * cont


def dynamic_expected_total_ub(
    observe: float, limit: float, accuracy: float, p_obs: float, p_limit: float
) -> float:
    """Upper bound on expected total steps: E(N) times the per-run bound."""
    runs = dynamic_expected_runs(accuracy, p_obs, p_limit)
    if is_unbounded(runs):
        return UNBOUNDED
    per_run = dynamic_expected_run_length_ub(observe, limit, accuracy, p_limit)
    if is_unbounded(per_run):
        return UNBOUNDED
    return runs * per_run


def _check_prob(x: float, name: str) -> None:
    if not (0.0 <= x <= 1.0):
        raise ValueError(f"{name} must be in [0, 1], got {x}")


def scan_dynamic_limits(
    rtd: EmpiricalRTD,
    observe: int,
    accuracy: float,
    quantiles: Sequence[float] = (0.5, 0.6, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 0.99, 1.0),
) -> List[Dict[str, float]]:
    """Analytic grid scan of the give-up point L over distinct quantile values.

    Returns one entry per candidate L > observe with the exact expected run
    count and the upper bound on expected total cost, sorted by the bound.
    """
    if observe < 1:
        raise ValueError(f"observe must be >= 1, got {observe}")
    cand = np.unique(np.quantile(rtd.lengths, quantiles).astype(np.int64))
    p_obs = rtd.cdf(observe)
    out = []
    for limit in cand:
        if limit <= observe:
            continue
        p_lim = rtd.cdf(limit)
        out.append(
            {
                "limit": int(limit),
                "expected_runs": dynamic_expected_runs(accuracy, p_obs, p_lim),
                "expected_total_ub": dynamic_expected_total_ub(
                    int(observe), int(limit), accuracy, p_obs, p_lim
                ),
            }
        )
    out.sort(key=lambda e: e["expected_total_ub"])
    return out


# -- policies --------------------------------------------------------------


@dataclass(frozen=True)
class FixedPolicy:
    """Restart unconditionally after cutoff steps."""

    cutoff: int

    def __post_init__(self) -> None:
        if self.cutoff < 1:
            raise ValueError(f"cutoff must be >= 1, got {self.cutoff}")

    def describe(self) -> str:
        return f"fixed:{self.cutoff}"


@dataclass(frozen=True)
class LubyPolicy:
    """Restart after scale * luby_term(i) steps on the i-th run."""

    scale: int = 1

    def __post_init__(self) -> None:
        if self.scale < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")

    def describe(self) -> str:
        return f"luby:{self.scale}"


class SyntheticPredictor:
    """Oracle that emits the true within-L label with a given accuracy."""

    def __init__(self, accuracy: float):
        _check_prob(accuracy, "accuracy")
        self.accuracy = accuracy

    def predict_short(
        self,
        lengths: np.ndarray,
        features: Optional[np.ndarray],
        limit: float,
        rng: np.random.Generator,
    ) -> np.ndarray:
        truth = lengths <= limit
        flip = rng.random(lengths.size) >= self.accuracy
        return truth ^ flip

    def describe(self) -> str:
        return f"oracle(accuracy={self.accuracy})"


class ModelPredictor:
    """Applies a trained tree to each run's recorded feature vector."""

    def __init__(self, model: "_learn.DecisionTreeModel"):
        self.model = model

    def predict_short(
        self,
        lengths: np.ndarray,
        features: Optional[np.ndarray],
        limit: float,
        rng: np.random.Generator,
    ) -> np.ndarray:
        if features is None:
            raise ValueError("this run source provides no features to predict from")
        return _learn.predict_batch(self.model, features) > 0.5

    def describe(self) -> str:
        return "model"


@dataclass(frozen=True)
class DynamicPolicy:
    """Observe each run for `observe` steps; if unfinished, continue only on
    a SHORT prediction, giving up at `limit` steps; otherwise restart."""

    observe: int
    limit: float  # may be math.inf
    predictor: object = None  # SyntheticPredictor or ModelPredictor

    def __post_init__(self) -> None:
        if self.observe < 1:
            raise ValueError(f"observe must be >= 1, got {self.observe}")
        if not self.observe < self.limit:
            raise ValueError("need observe < limit")

    def describe(self) -> str:
        lim = "inf" if math.isinf(self.limit) else int(self.limit)
        pred = self.predictor.describe() if self.predictor is not None else "none"
        return f"dynamic:O={self.observe},L={lim},{pred}"


Policy = Union[FixedPolicy, LubyPolicy, DynamicPolicy]


# -- run sources -----------------------------------------------------------


class RtdSource:
    """Resamples run lengths from an empirical distribution (no features)."""

    def __init__(self, rtd: EmpiricalRTD):
        self.rtd = rtd

    def sample(self, rng: np.random.Generator, size: int):
        idx = rng.integers(0, self.rtd.lengths.size, size=size)
        return self.rtd.lengths[idx], None


class DatasetSource:
    """Resamples (runtime, summary vector) rows from a labeled dataset."""

    def __init__(self, dataset: "_learn.Dataset"):
        self.dataset = dataset
        self.rtd = EmpiricalRTD(dataset.runtime)

    def sample(self, rng: np.random.Generator, size: int):
        idx = rng.integers(0, self.dataset.runtime.size, size=size)
        return (
            self.dataset.runtime[idx].astype(np.int64),
            self.dataset.X[idx],
        )


class SolverSource:
    """Draws fresh solver runs; used for live policy simulation.

    Runs are cut off at `max_steps` (the policy never watches longer), so a
    returned length equal to max_steps + 1 stands for "did not finish".
    """

    def __init__(self, instance, config, collect_features: bool = False):
        from . import solver as _solver  # local import to avoid cycles

        self._solver = _solver
        self.instance = instance
        self.config = config
        self.collect_features = collect_features
        self.rtd = None

    def sample(self, rng: np.random.Generator, size: int):
        from .features import summarize, summary_columns

        lengths = np.empty(size, dtype=np.int64)
        feats = [] if self.collect_features else None
        cap = self.config.cutoff
        for i in range(size):
            seed = int(rng.integers(0, 2**63 - 1))
            rec = self._solver.solve(self.instance, self.config, seed)
            if rec.outcome == self._solver.SOLVED:
                lengths[i] = rec.choice_points
            else:
                lengths[i] = (cap if cap is not None else rec.choice_points) + 1
            if feats is not None:
                sv = summarize(rec.trace, self.config.horizon)
                feats.append([sv.values[c] for c in summary_columns()])
        return lengths, (np.asarray(feats) if feats is not None else None)


# -- simulation ------------------------------------------------------------


@dataclass
class PolicyStats:
    """Analytic and simulated cost of one policy.

    expected_runs/expected_steps are analytic where a formula exists (exact
    for FIXED, exact E(N) and an upper bound on steps for DYNAMIC); the mc_*
    fields are Monte Carlo estimates over independent trials.  unbounded is
    set when the policy can never succeed or a trial exceeded the run budget.
    """

    policy: str
    trials: int
    expected_runs: Optional[float]
    expected_steps: Optional[float]
    mc_mean_cost: float
    mc_se_cost: float
    mc_mean_runs: float
    mc_se_runs: float
    percentiles: Dict[str, float] = field(default_factory=dict)
    unbounded: bool = False


def _success_probability(policy: Policy, run_source) -> Optional[float]:
    """Per-run success probability where it is exactly computable upfront."""
    rtd = getattr(run_source, "rtd", None)
    if isinstance(policy, FixedPolicy):
        return None if rtd is None else rtd.cdf(policy.cutoff)
    if isinstance(policy, DynamicPolicy):
        if isinstance(policy.predictor, SyntheticPredictor):
            if rtd is None:
                return None
            p_o = rtd.cdf(policy.observe)
            p_l = 1.0 if math.isinf(policy.limit) else rtd.cdf(policy.limit)
            return policy.predictor.accuracy * (p_l - p_o) + p_o
        if isinstance(policy.predictor, ModelPredictor) and isinstance(
            run_source, DatasetSource
        ):
            ds = run_source.dataset
            lengths = ds.runtime
            pred = _learn.predict_batch(policy.predictor.model, ds.X) > 0.5
            ok = (lengths <= policy.observe) | (pred & (lengths <= policy.limit))
            return float(ok.mean())
    # Luby cutoffs grow without bound, so any finite run length is reachable.
    return None


def simulate_policy(
    run_source,
    policy: Policy,
    trials: int,
    master_seed: int,
    run_budget: int = 1_000_000,
    percentiles: Sequence[int] = (50, 90, 99),
) -> PolicyStats:
    """Monte Carlo the policy to completion over independent trials.

    Each trial repeats runs under the policy until one succeeds, accumulating
    every step spent (runs killed at a cutoff or restarted at the observation
    point still cost what was watched).  Trials exceeding run_budget runs are
    reported as UNBOUNDED rather than looping forever.  Deterministic per
    master seed and independent of scheduling.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    rng = np.random.default_rng(derive_seed(master_seed, "policy", policy.describe()))
    rtd = getattr(run_source, "rtd", None)

    # A policy that cannot succeed on its support loops forever; detect the
    # analytic cases up front instead of burning the run budget.
    p_succ = _success_probability(policy, run_source)
    unbounded = False
    if p_succ is not None and p_succ == 0.0:
        unbounded = True

    total_cost = np.zeros(trials, dtype=float)
    total_runs = np.zeros(trials, dtype=np.int64)
    if not unbounded:
        active = np.arange(trials)
        round_no = 0
        while active.size:
            round_no += 1
            if round_no > run_budget:
                unbounded = True
                break
            lengths, feats = run_source.sample(rng, active.size)
            if isinstance(policy, FixedPolicy):
                cost = np.minimum(lengths, policy.cutoff)
                success = lengths <= policy.cutoff
            elif isinstance(policy, LubyPolicy):
                cutoff = policy.scale * luby_term(round_no)
                cost = np.minimum(lengths, cutoff)
                success = lengths <= cutoff
            else:
                done_early = lengths <= policy.observe
                pred_short = policy.predictor.predict_short(
                    lengths, feats, policy.limit, rng
                )
                go_on = done_early | pred_short
                capped = (
                    lengths.astype(float)
                    if math.isinf(policy.limit)
                    else np.minimum(lengths, policy.limit)
                )
                cost = np.where(go_on, capped, float(policy.observe))
                success = done_early | (pred_short & (lengths <= policy.limit))
            total_cost[active] += cost
            total_runs[active] += 1
            active = active[~success]

    if unbounded:
        mc_mean = UNBOUNDED
        mc_se = UNBOUNDED
        mean_runs = UNBOUNDED
        se_runs = UNBOUNDED
        pct = {f"p{p}": UNBOUNDED for p in percentiles}
    else:
        mc_mean = float(total_cost.mean())
        mc_se = float(total_cost.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
        mean_runs = float(total_runs.mean())
        se_runs = (
            float(total_runs.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
        )
        pct = {
            f"p{p}": float(np.percentile(total_cost, p)) for p in percentiles
        }

    expected_runs: Optional[float] = None
    expected_steps: Optional[float] = None
    if rtd is not None:
        if isinstance(policy, FixedPolicy):
            expected_steps = expected_time_fixed(rtd, policy.cutoff)
            p = rtd.cdf(policy.cutoff)
            expected_runs = UNBOUNDED if p == 0 else 1.0 / p
        elif isinstance(policy, DynamicPolicy) and isinstance(
            policy.predictor, SyntheticPredictor
        ):
            a = policy.predictor.accuracy
            p_o = rtd.cdf(policy.observe)
            p_l = 1.0 if math.isinf(policy.limit) else rtd.cdf(policy.limit)
            expected_runs = dynamic_expected_runs(a, p_o, p_l)
            expected_steps = dynamic_expected_total_ub(
                policy.observe, policy.limit, a, p_o, p_l
            )
    return PolicyStats(
        policy=policy.describe(),
        trials=trials,
        expected_runs=expected_runs,
        expected_steps=expected_steps,
        mc_mean_cost=mc_mean,
        mc_se_cost=mc_se,
        mc_mean_runs=mean_runs,
        mc_se_runs=se_runs,
        percentiles=pct,
        unbounded=unbounded,
    )
