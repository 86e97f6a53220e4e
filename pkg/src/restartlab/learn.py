"""Bayesian decision-tree learning of run-length classes.

Runs are labeled SHORT when their length falls strictly below the training
median, LONG otherwise; runs that finished before the observation horizon
carry no usable trace and are excluded upstream.  Trees are scored by exact
Bayesian marginal likelihood with a uniform prior over each leaf's class
rate, plus a structure prior of kappa per free parameter (one per leaf), and
grown greedily: at every step the single split with the best positive score
gain anywhere in the tree is applied.  Predictions are posterior-mean
(Laplace) estimates, so they never reach 0 or 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import gammaln

SHORT = "SHORT"
LONG = "LONG"

MAX_SPLIT_CANDIDATES = 64


def label_by_median(runtimes: Sequence[float]) -> Tuple[float, np.ndarray]:
    """Median split: returns (median, is_short array); ties go to LONG."""
    arr = np.asarray(runtimes, dtype=float)
    if arr.size == 0:
        raise ValueError("cannot label an empty run set")
    median = float(np.median(arr))
    return median, arr < median


def leaf_log_marginal(n_short: int, n_long: int) -> float:
    """ln of the marginal likelihood of one leaf under a uniform rate prior.

    Equals ln(n_short! * n_long! / (n_short + n_long + 1)!).
    """
    if n_short < 0 or n_long < 0:
        raise ValueError("counts must be non-negative")
    return (
        math.lgamma(n_short + 1)
        + math.lgamma(n_long + 1)
        - math.lgamma(n_short + n_long + 2)
    )


def _leaf_log_marginal_vec(ns: np.ndarray, nl: np.ndarray) -> np.ndarray:
    return gammaln(ns + 1) + gammaln(nl + 1) - gammaln(ns + nl + 2)


@dataclass
class TreeNode:
    """Internal node (feature/threshold set) or leaf (counts only)."""

    n_short: int
    n_long: int
    feature: Optional[int] = None
    threshold: Optional[float] = None
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def leaves(self) -> Iterable["TreeNode"]:
        if self.is_leaf:
            yield self
        else:
            yield from self.left.leaves()
            yield from self.right.leaves()


@dataclass
class DecisionTreeModel:
    """A grown tree plus everything needed to apply and persist it."""

    root: TreeNode
    columns: List[str]
    kappa: float
    training_median: Optional[float] = None
    registry_hash: Optional[str] = None

    @property
    def leaf_count(self) -> int:
        return sum(1 for _ in self.root.leaves())

    @property
    def training_counts(self) -> Tuple[int, int]:
        return self.root.n_short, self.root.n_long


def tree_score(root: TreeNode, kappa: float) -> float:
    """Score from the counts stored in the tree: leaf marginals + leaves*ln(kappa)."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    total = 0.0
    n_leaves = 0
    for leaf in root.leaves():
        total += leaf_log_marginal(leaf.n_short, leaf.n_long)
        n_leaves += 1
    return total + n_leaves * math.log(kappa)


def bayesian_score(
    model: DecisionTreeModel,
    X: np.ndarray,
    y: Sequence[bool],
    kappa: Optional[float] = None,
) -> float:
    """Score the tree's structure against a dataset.

    Rows are routed to leaves by the stored splits; the score is the sum of
    per-leaf log marginal likelihoods of the routed class counts plus
    ln(kappa) for each leaf (one free parameter per leaf).
    """
    if kappa is None:
        kappa = model.kappa
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=bool)
    total = 0.0
    n_leaves = 0

    def walk(node: TreeNode, rows: np.ndarray) -> None:
        nonlocal total, n_leaves
        if node.is_leaf:
            ns = int(y[rows].sum())
            total += leaf_log_marginal(ns, rows.size - ns)
            n_leaves += 1
            return
        mask = X[rows, node.feature] <= node.threshold
        walk(node.left, rows[mask])
        walk(node.right, rows[~mask])

    if model.root.is_leaf:
        ns = int(y.sum())
        total = leaf_log_marginal(ns, y.size - ns)
        n_leaves = 1
    else:
        walk(model.root, np.arange(y.size))
    return total + n_leaves * math.log(kappa)


def _best_split(
    X: np.ndarray, y: np.ndarray, rows: np.ndarray, ln_kappa: float
) -> Optional[Tuple[float, int, float]]:
    """Best (gain, feature, threshold) for one leaf, or None.

    Candidate thresholds are midpoints between consecutive distinct sorted
    values, thinned to at most MAX_SPLIT_CANDIDATES by rank spacing.  Ties
    are broken toward the lowest feature index, then the lowest threshold.
    """
    ns_total = int(y[rows].sum())
    nl_total = rows.size - ns_total
    base = leaf_log_marginal(ns_total, nl_total)
    best: Optional[Tuple[float, int, float]] = None
    for j in range(X.shape[1]):
        v = X[rows, j]
        order = np.argsort(v, kind="stable")
        sv = v[order]
        sy = y[rows][order]
        boundaries = np.nonzero(sv[1:] != sv[:-1])[0]
        if boundaries.size == 0:
            continue
        if boundaries.size > MAX_SPLIT_CANDIDATES:
            pick = np.unique(
                np.round(
                    np.linspace(0, boundaries.size - 1, MAX_SPLIT_CANDIDATES)
                ).astype(int)
            )
            boundaries = boundaries[pick]
        thresholds = (sv[boundaries] + sv[boundaries + 1]) / 2.0
        cum_short = np.cumsum(sy)
        left_n = boundaries + 1
        left_s = cum_short[boundaries]
        left_l = left_n - left_s
        right_s = ns_total - left_s
        right_l = nl_total - left_l
        gains = (
            _leaf_log_marginal_vec(left_s, left_l)
            + _leaf_log_marginal_vec(right_s, right_l)
            - base
            + ln_kappa
        )
        i = int(np.argmax(gains))  # first max: lowest threshold wins ties
        g = float(gains[i])
        if best is None or g > best[0]:
            best = (g, j, float(thresholds[i]))
    if best is None or best[0] <= 0:
        return None
    return best


def grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    kappa: float,
    columns: Optional[Sequence[str]] = None,
) -> DecisionTreeModel:
    """Greedy global-best growth from a single leaf.

    Repeatedly applies, anywhere in the tree, the split with the largest
    positive score gain; stops when no split improves the score.  With a
    fixed tie-break order the grown tree for a smaller kappa is always a
    prefix of the tree for a larger one.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=bool)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (rows, features) aligned with y")
    if columns is None:
        columns = [f"f{j}" for j in range(X.shape[1])]
    columns = list(columns)
    if len(columns) != X.shape[1]:
        raise ValueError("column names must match feature count")
    ln_kappa = math.log(kappa)
    all_rows = np.arange(X.shape[0])
    root = TreeNode(n_short=int(y.sum()), n_long=int(X.shape[0] - y.sum()))
    # leaf work list: (node, rows, cached best split or None)
    leaves: List[List] = [[root, all_rows, _best_split(X, y, all_rows, ln_kappa)]]
    while True:
        best_i = -1
        best_gain = 0.0
        best_entry = None
        for i, entry in enumerate(leaves):
            cand = entry[2]
            if cand is None:
                continue
            gain, j, theta = cand
            better = gain > best_gain
            if not better and best_entry is not None and gain == best_gain:
                bj, btheta = best_entry[1], best_entry[2]
                better = (j, theta) < (bj, btheta)
            if better:
                best_i = i
                best_gain = gain
                best_entry = cand
        if best_i < 0:
            break
        node, rows, (_, j, theta) = leaves[best_i][0], leaves[best_i][1], best_entry
        mask = X[rows, j] <= theta
        lrows = rows[mask]
        rrows = rows[~mask]
        node.feature = j
        node.threshold = theta
        node.left = TreeNode(n_short=int(y[lrows].sum()), n_long=int(lrows.size - y[lrows].sum()))
        node.right = TreeNode(n_short=int(y[rrows].sum()), n_long=int(rrows.size - y[rrows].sum()))
        leaves[best_i] = [node.left, lrows, _best_split(X, y, lrows, ln_kappa)]
        leaves.append([node.right, rrows, _best_split(X, y, rrows, ln_kappa)])
    return DecisionTreeModel(root=root, columns=columns, kappa=kappa)


def marginal_model(y: Sequence[bool], columns: Optional[Sequence[str]] = None) -> DecisionTreeModel:
    """The no-feature baseline: a single leaf holding the class counts."""
    y = np.asarray(y, dtype=bool)
    root = TreeNode(n_short=int(y.sum()), n_long=int(y.size - y.sum()))
    return DecisionTreeModel(root=root, columns=list(columns or []), kappa=1.0)


def predict_proba_short(model: DecisionTreeModel, x: Union[Mapping[str, float], Sequence[float]]) -> float:
    """Laplace posterior-mean P(SHORT) for one summary vector.

    Accepts a mapping keyed by column name (missing features are an error)
    or a sequence aligned with model.columns.
    """
    if isinstance(x, Mapping):
        row = []
        for name in model.columns:
            if name not in x:
                raise ValueError(f"missing feature {name!r}")
            row.append(float(x[name]))
    else:
        row = [float(v) for v in x]
        if len(row) != len(model.columns) and not (
            len(model.columns) == 0 and model.root.is_leaf
        ):
            raise ValueError(
                f"expected {len(model.columns)} features, got {len(row)}"
            )
    node = model.root
    while not node.is_leaf:
        node = node.left if row[node.feature] <= node.threshold else node.right
    return (node.n_short + 1) / (node.n_short + node.n_long + 2)


def predict_batch(model: DecisionTreeModel, X: np.ndarray) -> np.ndarray:
    """Vectorized P(SHORT) for a feature matrix aligned with model.columns."""
    X = np.asarray(X, dtype=float)
    if model.root.is_leaf:
        p = (model.root.n_short + 1) / (model.root.n_short + model.root.n_long + 2)
        return np.full(X.shape[0] if X.ndim == 2 else len(X), p)
    out = np.empty(X.shape[0], dtype=float)

    def fill(node: TreeNode, rows: np.ndarray) -> None:
        if node.is_leaf:
            out[rows] = (node.n_short + 1) / (node.n_short + node.n_long + 2)
            return
        mask = X[rows, node.feature] <= node.threshold
        fill(node.left, rows[mask])
        fill(node.right, rows[~mask])

    fill(model.root, np.arange(X.shape[0]))
    return out


@dataclass
class EvaluationReport:
    """Accuracy and mean natural-log score of a model on a labeled set."""

    size: int
    accuracy: float
    avg_log_score: float
    confusion: Dict[str, int]


def evaluate(model: DecisionTreeModel, X: np.ndarray, y: Sequence[bool]) -> EvaluationReport:
    """Argmax accuracy (P(SHORT) > 0.5 predicts SHORT, 0.5 predicts LONG)
    and average ln P(true label)."""
    y = np.asarray(y, dtype=bool)
    if y.size == 0:
        raise ValueError("cannot evaluate on an empty set")
    p = predict_batch(model, X)
    pred_short = p > 0.5
    correct = pred_short == y
    scores = np.where(y, np.log(p), np.log1p(-p))
    confusion = {
        "short_as_short": int(np.sum(y & pred_short)),
        "short_as_long": int(np.sum(y & ~pred_short)),
        "long_as_short": int(np.sum(~y & pred_short)),
        "long_as_long": int(np.sum(~y & ~pred_short)),
    }
    return EvaluationReport(
        size=int(y.size),
        accuracy=float(correct.mean()),
        avg_log_score=float(scores.mean()),
        confusion=confusion,
    )


@dataclass
class TuningResult:
    """Outcome of the structure-prior search."""

    kappa: float
    model: DecisionTreeModel
    holdout_scores: Dict[float, float]
    holdout_accuracy: float
    split_seed: int


DEFAULT_KAPPA_GRID: Tuple[float, ...] = tuple(10.0 ** -k for k in range(1, 9))


def tune_kappa(
    X: np.ndarray,
    y: Sequence[bool],
    grid: Sequence[float] = DEFAULT_KAPPA_GRID,
    seed: int = 0,
    columns: Optional[Sequence[str]] = None,
) -> TuningResult:
    """Pick kappa by holdout log-likelihood on a seeded 70/30 split.

    The winning kappa (first in grid order on ties) is then used to regrow
    the tree on the full training set.  A split that leaves the 70% side
    single-class is degenerate and is redrawn with the next seed.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=bool)
    if not len(grid):
        raise ValueError("kappa grid is empty")
    n = y.size
    if n < 4:
        raise ValueError("too few rows to tune on")
    split_seed = seed
    rng_tries = 0
    while True:
        rng = np.random.default_rng(split_seed)
        perm = rng.permutation(n)
        n_fit = int(round(n * 0.7))
        fit_rows, held_rows = perm[:n_fit], perm[n_fit:]
        if 0 < y[fit_rows].sum() < fit_rows.size and held_rows.size > 0:
            break
        rng_tries += 1
        split_seed += 1
        if rng_tries > 100:
            raise ValueError("could not draw a two-class tuning split")
    holdout_scores: Dict[float, float] = {}
    best_kappa = None
    best_score = -math.inf
    best_acc = 0.0
    for kappa in grid:
        m = grow_tree(X[fit_rows], y[fit_rows], kappa, columns=columns)
        rep = evaluate(m, X[held_rows], y[held_rows])
        holdout_scores[kappa] = rep.avg_log_score
        if rep.avg_log_score > best_score:
            best_score = rep.avg_log_score
            best_kappa = kappa
            best_acc = rep.accuracy
    model = grow_tree(X, y, best_kappa, columns=columns)
    return TuningResult(
        kappa=best_kappa,
        model=model,
        holdout_scores=holdout_scores,
        holdout_accuracy=best_acc,
        split_seed=split_seed,
    )


@dataclass
class Dataset:
    """Labeled run summaries: one row per uncensored run."""

    columns: List[str]
    X: np.ndarray
    runtime: np.ndarray
    is_short: np.ndarray
    censored: np.ndarray
    divisor: np.ndarray
    median: float
    provenance: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        n_rows = len(self.runtime)
        width = -1 if n_rows else len(self.columns)
        self.X = np.asarray(self.X, dtype=float).reshape(n_rows, width)
        self.runtime = np.asarray(self.runtime, dtype=np.int64)
        self.is_short = np.asarray(self.is_short, dtype=bool)
        self.censored = np.asarray(self.censored, dtype=bool)
        self.divisor = np.asarray(self.divisor, dtype=float)

    @property
    def size(self) -> int:
        return int(self.runtime.size)

    @property
    def scaled_runtime(self) -> np.ndarray:
        """Runtime divided by the per-row divisor (1.0 outside multi mode)."""
        return self.runtime / self.divisor

    def subset(self, mask: np.ndarray) -> "Dataset":
        mask = np.asarray(mask, dtype=bool)
        return Dataset(
            columns=list(self.columns),
            X=self.X[mask],
            runtime=self.runtime[mask],
            is_short=self.is_short[mask],
            censored=self.censored[mask],
            divisor=self.divisor[mask],
            median=self.median,
            provenance=dict(self.provenance),
        )

    def relabeled(self, median: float) -> "Dataset":
        out = Dataset(
            columns=list(self.columns),
            X=self.X,
            runtime=self.runtime,
            is_short=self.scaled_runtime < median,
            censored=self.censored,
            divisor=self.divisor,
            median=float(median),
            provenance=dict(self.provenance),
        )
        return out


@dataclass
class CascadeEntry:
    """One stage of the cascade: runs longer than threshold, re-split."""

    threshold: float
    dataset: Optional[Dataset]
    skipped: bool
    reason: str = ""


def cascade_datasets(
    dataset: Dataset, thresholds: Sequence[float], min_rows: int = 50
) -> List[CascadeEntry]:
    """Derive per-threshold sub-datasets for conditional length prediction.

    Each stage keeps rows with runtime strictly above its threshold and
    relabels them by the subset's own median.  Stages smaller than min_rows
    are skipped with a reason instead of producing unstable models.
    """
    out: List[CascadeEntry] = []
    for t in thresholds:
        mask = dataset.runtime > t
        k = int(mask.sum())
        if k < min_rows:
            out.append(
                CascadeEntry(
                    threshold=float(t),
                    dataset=None,
                    skipped=True,
                    reason=f"only {k} rows above {t}, need {min_rows}",
                )
            )
            continue
        sub = dataset.subset(mask)
        median, labels = label_by_median(sub.runtime)
        sub.median = median
        sub.is_short = labels
        out.append(CascadeEntry(threshold=float(t), dataset=sub, skipped=False))
    return out
