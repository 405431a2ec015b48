"""Random forest for the at-risk probability with a subject-level two-stage bootstrap.

Each tree is grown on one bootstrap draw of subjects, with one randomly chosen
window per drawn subject.  Predictions for a subject use only the trees for
which that subject was out of bag.

Features are always handled in sorted-name order and every tree draws its
randomness from ``SeedSequence(seed, spawn_key=(tree_index,))``, so results do
not depend on the input column order or on how many threads grow the trees.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np
import pandas as pd

log = logging.getLogger(__name__)


ALL_FEATURES = 2**31 - 1  # mtry value meaning plain bagging


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    mtry: int | None = None
    min_node_size: int = 10
    max_depth: int | None = None
    clip: float = 0.01
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if not 0 < self.clip < 0.5:
            raise ValueError("clip must lie in (0, 0.5)")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")

    def resolve_mtry(self, p: int) -> int:
        """Features tried per split: floor(sqrt(p)) by default, capped at ``p``."""
        if p < 1:
            raise ValueError("need at least one feature")
        return min(self.mtry, p) if self.mtry is not None else max(1, math.isqrt(p))


@dataclass
class TrainingPanel:
    """Rows ``(subject, t)`` with a binary label and named numeric features."""

    subject_ids: np.ndarray
    t: np.ndarray
    labels: np.ndarray
    features: np.ndarray
    feature_names: tuple[str, ...]
    # rows grouped by subject (first-appearance order): subject s owns
    # grouped_rows[row_start[s]:row_start[s] + row_count[s]]
    subject_index: np.ndarray = field(repr=False, default=None)
    grouped_rows: np.ndarray = field(repr=False, default=None)
    row_start: np.ndarray = field(repr=False, default=None)
    row_count: np.ndarray = field(repr=False, default=None)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, label: str = "at_risk",
                   features: list[str] | None = None) -> "TrainingPanel":
        if features is None:
            features = [c for c in frame.columns if c not in ("subject_id", label)]
        names = tuple(sorted(features))
        X = frame.loc[:, list(names)].to_numpy(dtype=float)
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        y = frame[label].to_numpy().astype(float)
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be binary")
        sid = frame["subject_id"].to_numpy()
        codes, uniques = pd.factorize(sid, sort=False)
        order = np.argsort(codes, kind="stable")
        bounds = np.searchsorted(codes[order], np.arange(len(uniques) + 1))
        t = frame["t"].to_numpy(dtype=float) if "t" in frame else np.zeros(len(frame))
        return cls(sid, t, y, np.ascontiguousarray(X), names, codes.astype(np.int64),
                   order, bounds[:-1], np.diff(bounds))

    @property
    def n_subjects(self) -> int:
        return self.row_start.size

    def rows_of(self, s: int) -> np.ndarray:
        return self.grouped_rows[self.row_start[s]:self.row_start[s] + self.row_count[s]]


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    in_bag: np.ndarray  # boolean per subject

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))


@dataclass
class Forest:
    trees: list[Tree]
    feature_names: tuple[str, ...]
    config: ForestConfig


@dataclass
class WeightTable:
    subject_ids: np.ndarray
    t: np.ndarray
    pi_hat: np.ndarray
    n_oob_trees: np.ndarray
    fallback: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"subject_id": self.subject_ids, "t": self.t,
                             "pi_hat": self.pi_hat, "n_oob_trees": self.n_oob_trees})


def tree_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))


def two_stage_bootstrap(panel: TrainingPanel, rng: np.random.Generator):
    """Draw n subjects with replacement, then one window per drawn occurrence.

    Returns the bagged row positions (one per occurrence) and a boolean
    in-bag mask over subjects.
    """
    n = panel.n_subjects
    if n == 0:
        raise ValueError("panel is empty")
    drawn = rng.integers(0, n, size=n)
    pick = np.floor(rng.random(n) * panel.row_count[drawn]).astype(np.int64)
    rows = panel.grouped_rows[panel.row_start[drawn] + pick]
    in_bag = np.zeros(n, dtype=bool)
    in_bag[drawn] = True
    return rows, in_bag


@numba.njit(cache=True, nogil=True)
def _grow(X, y, mtry, min_node, max_depth, keys):
    n, p = X.shape
    cap = 2 * n + 1
    feat = np.full(cap, -1, np.int64)
    thr = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    val = np.zeros(cap)
    depth = np.zeros(cap, np.int64)
    idx = np.arange(n)
    # node -> contiguous slice of idx
    lo = np.zeros(cap, np.int64)
    hi = np.zeros(cap, np.int64)
    hi[0] = n
    n_nodes = 1
    stack = np.zeros(cap, np.int64)
    top = 1
    key_row = 0
    while top > 0:
        top -= 1
        node = stack[top]
        a = lo[node]
        b = hi[node]
        m = b - a
        s = 0.0
        for r in range(a, b):
            s += y[idx[r]]
        pbar = s / m
        val[node] = pbar
        parent_gini = 2.0 * pbar * (1.0 - pbar)
        if parent_gini <= 0.0 or m < 2 * min_node or (max_depth >= 0 and depth[node] >= max_depth):
            continue
        # sample mtry features: smallest keys among p
        order = np.argsort(keys[key_row % keys.shape[0]])
        key_row += 1
        chosen = np.sort(order[:mtry])
        best = parent_gini - 1e-12
        best_f = -1
        best_t = 0.0
        sub = idx[a:b].copy()
        for ci in range(mtry):
            f = chosen[ci]
            xs = np.empty(m)
            for r in range(m):
                xs[r] = X[sub[r], f]
            o = np.argsort(xs, kind="mergesort")
            left_sum = 0.0
            for r in range(m - 1):
                left_sum += y[sub[o[r]]]
                x0 = xs[o[r]]
                x1 = xs[o[r + 1]]
                if x1 <= x0:
                    continue
                nl = r + 1
                nr = m - nl
                if nl < min_node or nr < min_node:
                    continue
                pl = left_sum / nl
                pr = (s - left_sum) / nr
                g = (nl * 2.0 * pl * (1.0 - pl) + nr * 2.0 * pr * (1.0 - pr)) / m
                if g < best:
                    best = g
                    best_f = f
                    best_t = 0.5 * (x0 + x1)
        if best_f < 0:
            continue
        # partition idx[a:b] around the threshold, preserving order
        buf_l = np.empty(m, np.int64)
        buf_r = np.empty(m, np.int64)
        nl = 0
        nr = 0
        for r in range(a, b):
            j = idx[r]
            if X[j, best_f] <= best_t:
                buf_l[nl] = j
                nl += 1
            else:
                buf_r[nr] = j
                nr += 1
        for r in range(nl):
            idx[a + r] = buf_l[r]
        for r in range(nr):
            idx[a + nl + r] = buf_r[r]
        feat[node] = best_f
        thr[node] = best_t
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        lo[lc] = a
        hi[lc] = a + nl
        lo[rc] = a + nl
        hi[rc] = b
        depth[lc] = depth[node] + 1
        depth[rc] = depth[node] + 1
        # right first so the left child is processed next
        stack[top] = rc
        stack[top + 1] = lc
        top += 2
    return feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes], val[:n_nodes]


@numba.njit(cache=True, nogil=True)
def _predict(feat, thr, left, right, val, X):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        node = 0
        while feat[node] >= 0:
            if X[i, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = val[node]
    return out


def grow_tree(X: np.ndarray, y: np.ndarray, cfg: ForestConfig, rng: np.random.Generator,
              in_bag: np.ndarray | None = None) -> Tree:
    """Grow one Gini tree on the given rows.

    Splits are admissible only when both daughters keep ``min_node_size``
    rows; among equally good splits the first feature in sorted-name order
    and the smallest threshold win.
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] < 1:
        raise ValueError("cannot grow a tree on zero rows")
    p = X.shape[1]
    m = cfg.resolve_mtry(p)
    keys = rng.random((2 * X.shape[0] + 1, p))
    max_depth = -1 if cfg.max_depth is None else int(cfg.max_depth)
    f, t, l, r, v = _grow(X, y, m, int(cfg.min_node_size), max_depth, keys)
    return Tree(f, t, l, r, v, in_bag if in_bag is not None else np.zeros(0, bool))


def predict_tree(tree: Tree, X: np.ndarray) -> np.ndarray:
    return _predict(tree.feature, tree.threshold, tree.left, tree.right, tree.value,
                    np.ascontiguousarray(X, dtype=float))


def _one_tree(panel: TrainingPanel, cfg: ForestConfig, b: int) -> Tree:
    rng = np.random.default_rng(tree_seed(cfg.seed, b))
    rows, in_bag = two_stage_bootstrap(panel, rng)
    return grow_tree(panel.features[rows], panel.labels[rows], cfg, rng, in_bag)


def fit_forest(panel: TrainingPanel, cfg: ForestConfig) -> Forest:
    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(cfg.n_jobs) as ex:
            trees = list(ex.map(lambda b: _one_tree(panel, cfg, b), range(cfg.n_trees)))
    else:
        trees = [_one_tree(panel, cfg, b) for b in range(cfg.n_trees)]
    return Forest(trees, panel.feature_names, cfg)


def oob_predict(forest: Forest, panel: TrainingPanel) -> WeightTable:
    if not forest.trees:
        raise ValueError("forest has no trees")
    if tuple(forest.feature_names) != tuple(panel.feature_names):
        raise ValueError("panel features do not match the forest")
    n = panel.labels.size
    oob_sum = np.zeros(n)
    oob_cnt = np.zeros(n, dtype=np.int64)
    all_sum = np.zeros(n)
    sub = panel.subject_index
    for tree in forest.trees:
        pred = predict_tree(tree, panel.features)
        all_sum += pred
        oob = ~tree.in_bag[sub]
        oob_sum[oob] += pred[oob]
        oob_cnt[oob] += 1
    fallback = oob_cnt == 0
    if fallback.any():
        log.warning("%d row(s) were in bag for every tree; using all-tree averages", int(fallback.sum()))
    with np.errstate(invalid="ignore", divide="ignore"):
        pi = np.where(fallback, all_sum / len(forest.trees), oob_sum / np.maximum(oob_cnt, 1))
    eps = forest.config.clip
    pi = np.clip(pi, eps, 1.0 - eps)
    return WeightTable(panel.subject_ids, panel.t, pi, oob_cnt, fallback)


def estimate_weights(frame: pd.DataFrame, features: list[str], cfg: ForestConfig,
                     label: str = "at_risk") -> WeightTable:
    """Fit the forest on ``frame`` and return clipped out-of-bag probabilities."""
    panel = TrainingPanel.from_frame(frame, label=label, features=features)
    return oob_predict(fit_forest(panel, cfg), panel)
