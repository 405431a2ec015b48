"""Weighted estimating equations for pseudo-observations, identity link.

Each used row contributes ``w * z * (po - beta'z)`` with ``w = R / pi_hat``.
Standard errors come from the sandwich clustered by subject.
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

log = logging.getLogger(__name__)

WORKING = ("independence", "unstructured")

_FACTOR = re.compile(r"^I\(\s*([A-Za-z_][\w.]*)\s*(<=|>=|==|<|>)\s*([-+]?[\d.]+(?:[eE][-+]?\d+)?)\s*\)$")
_NAME = re.compile(r"^[A-Za-z_][\w.]*$")
_OPS = {"<": np.less, "<=": np.less_equal, ">": np.greater, ">=": np.greater_equal, "==": np.equal}


class GEEError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Design terms are column names, ``a:b`` products and ``I(a >= c)`` indicators."""

    terms: tuple[str, ...]
    intercept: bool = True
    working: str = "independence"
    tol: float = 1e-8
    max_iter: int = 100

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(t.strip() for t in self.terms))
        if self.working not in WORKING:
            raise ValueError(f"working structure must be one of {WORKING}")
        for t in self.terms:
            parse_term(t)
        if not self.terms and not self.intercept:
            raise ValueError("model has no terms")

    @property
    def names(self) -> list[str]:
        return (["(Intercept)"] if self.intercept else []) + list(self.terms)


def parse_term(term: str) -> list[tuple]:
    factors = []
    for f in term.split(":"):
        f = f.strip()
        m = _FACTOR.match(f)
        if m:
            factors.append(("ind", m.group(1), m.group(2), float(m.group(3))))
        elif _NAME.match(f):
            factors.append(("col", f))
        else:
            raise ValueError(f"cannot parse model term {term!r}")
    return factors


def term_columns(spec: ModelSpec) -> set[str]:
    return {f[1] for t in spec.terms for f in parse_term(t)}


def design_matrix(frame: pd.DataFrame, spec: ModelSpec) -> np.ndarray:
    missing = sorted(term_columns(spec) - set(frame.columns))
    if missing:
        raise GEEError(f"missing covariate column(s): {', '.join(missing)}")
    cols = []
    if spec.intercept:
        cols.append(np.ones(len(frame)))
    for t in spec.terms:
        v = np.ones(len(frame))
        for f in parse_term(t):
            x = frame[f[1]].to_numpy(dtype=float)
            v = v * (x if f[0] == "col" else _OPS[f[2]](x, f[3]).astype(float))
        cols.append(v)
    return np.column_stack(cols)


@dataclass
class FitResult:
    names: list[str]
    estimates: np.ndarray
    cov: np.ndarray
    n_subjects: int
    n_rows: int
    working: str
    converged: bool = True
    iterations: int = 0
    projected: bool = False
    working_cov: np.ndarray | None = None
    window_levels: np.ndarray | None = None

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0, None))

    def ci(self, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
        z = stats.norm.ppf(0.5 + level / 2)
        return self.estimates - z * self.se, self.estimates + z * self.se

    @property
    def p_values(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            z = self.estimates / self.se
        return 2 * stats.norm.sf(np.abs(z))

    def table(self) -> pd.DataFrame:
        lo, hi = self.ci()
        return pd.DataFrame({"term": self.names, "estimate": self.estimates, "se": self.se,
                             "ci_lo": lo, "ci_hi": hi, "p_value": self.p_values})


def _check_inputs(X, y, w, clusters):
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
        raise GEEError("response and design must be finite")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise GEEError("weights must be positive and finite (drop rows with R = 0 first)")
    p = X.shape[1]
    n_sub = np.unique(clusters).size
    if n_sub < p + 1:
        raise GEEError(f"need at least {p + 1} subjects, got {n_sub}")
    if np.linalg.matrix_rank(X * np.sqrt(w)[:, None]) < p:
        raise GEEError("design matrix is rank deficient on the weighted sample")
    return n_sub


def _cluster_sums(codes, M, n_groups):
    out = np.zeros((n_groups, M.shape[1]))
    np.add.at(out, codes, M)
    return out


def _fit_independence(X, y, w, codes, n_groups):
    A = (X * w[:, None]).T @ X
    beta = np.linalg.solve(A, (X * w[:, None]).T @ y)
    r = y - X @ beta
    U = _cluster_sums(codes, X * (w * r)[:, None], n_groups)
    Ainv = np.linalg.inv(A)
    cov = Ainv @ (U.T @ U) @ Ainv
    return beta, (cov + cov.T) / 2


def nearest_correlation(C: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Clip negative eigenvalues and rescale to unit diagonal."""
    vals, vecs = np.linalg.eigh((C + C.T) / 2)
    P = (vecs * np.maximum(vals, floor)) @ vecs.T
    d = np.sqrt(np.diag(P))
    return P / np.outer(d, d)


def _pairwise_cov(r, w, obs):
    """Weighted available-case covariance across window levels.

    ``r``, ``w`` and ``obs`` are (subjects x levels) arrays; entries where
    ``obs`` is False are ignored.
    """
    sw = np.sqrt(np.where(obs, w, 0.0))
    e = np.where(obs, r, 0.0) * sw
    num = e.T @ e
    den = sw.T @ sw
    n_pair = obs.T.astype(float) @ obs.astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        S = np.where(den > 0, num / den, 0.0) * np.where(n_pair > 1, n_pair / (n_pair - 1), 0.0)
    return S


def _fit_unstructured(X, y, w, codes, n_groups, levels_idx, n_levels, spec, beta0):
    obs = np.zeros((n_groups, n_levels), dtype=bool)
    obs[codes, levels_idx] = True
    if np.any(np.bincount(codes * n_levels + levels_idx, minlength=n_groups * n_levels) > 1):
        raise GEEError("a subject has more than one row at the same window start")
    p = X.shape[1]
    Xg = np.zeros((n_groups, n_levels, p))
    Xg[codes, levels_idx] = X
    yg = np.zeros((n_groups, n_levels))
    yg[codes, levels_idx] = y
    wg = np.zeros((n_groups, n_levels))
    wg[codes, levels_idx] = w
    masks, pattern = np.unique(obs, axis=0, return_inverse=True)
    pattern = pattern.ravel()

    beta = beta0
    converged = False
    projected = False
    it = 0
    Sigma = np.eye(n_levels)
    for it in range(1, spec.max_iter + 1):
        r = yg - Xg @ beta
        S = _pairwise_cov(r, wg, obs)
        sd = np.sqrt(np.clip(np.diag(S), 1e-12, None))
        C = S / np.outer(sd, sd)
        np.fill_diagonal(C, 1.0)
        if np.linalg.eigvalsh((C + C.T) / 2).min() < 1e-10:
            C = nearest_correlation(C)
            projected = True
        Sigma = C * np.outer(sd, sd)
        A, b, _ = _accumulate(Xg, yg, wg, masks, pattern, Sigma, beta, need_u=False)
        new = np.linalg.solve(A, b)
        step = np.max(np.abs(new - beta))
        beta = new
        if step < spec.tol:
            converged = True
            break
    if not converged:
        log.warning("unstructured GEE did not converge in %d iterations", spec.max_iter)
    A, _, U = _accumulate(Xg, yg, wg, masks, pattern, Sigma, beta, need_u=True)
    Ainv = np.linalg.inv(A)
    cov = Ainv @ (U.T @ U) @ Ainv.T
    return beta, (cov + cov.T) / 2, converged, it, projected, Sigma


def _accumulate(Xg, yg, wg, masks, pattern, Sigma, beta, need_u):
    # per missingness pattern: A += X' V^-1 W X, b += X' V^-1 W y, U_i = X_i' V^-1 W_i r_i
    p = Xg.shape[2]
    A = np.zeros((p, p))
    b = np.zeros(p)
    U = np.zeros((Xg.shape[0], p)) if need_u else None
    for k, m in enumerate(masks):
        sel = np.flatnonzero(pattern == k)
        lv = np.flatnonzero(m)
        Vinv = np.linalg.inv(Sigma[np.ix_(lv, lv)])
        Xs = Xg[sel][:, lv, :]
        Ws = wg[sel][:, lv]
        ys = yg[sel][:, lv]
        XV = np.einsum("nlp,lk->nkp", Xs, Vinv)
        XVW = XV * Ws[:, :, None]
        A += np.einsum("nkp,nkq->pq", XVW, Xs)
        b += np.einsum("nkp,nk->p", XVW, ys)
        if need_u:
            U[sel] = np.einsum("nkp,nk->np", XVW, ys - Xs @ beta)
    return A, b, U


def fit_weighted_gee(frame: pd.DataFrame, spec: ModelSpec, response: str = "po",
                     weight: str | None = "weight", cluster: str = "subject_id",
                     window: str = "t") -> FitResult:
    """Solve the weighted pseudo-observation estimating equations.

    ``weight`` names a column holding ``R / pi_hat``; ``None`` fits the
    unweighted complete-case equations.  Rows with zero weight are dropped.
    """
    if frame.empty:
        raise GEEError("no rows to fit")
    w = np.ones(len(frame)) if weight is None else frame[weight].to_numpy(dtype=float)
    keep = w != 0
    frame = frame.loc[keep]
    w = w[keep]
    X = design_matrix(frame, spec)
    y = frame[response].to_numpy(dtype=float)
    codes, uniq = pd.factorize(frame[cluster], sort=True)
    n_sub = _check_inputs(X, y, w, codes)
    beta, cov = _fit_independence(X, y, w, codes, uniq.size)
    if spec.working == "independence":
        return FitResult(spec.names, beta, cov, n_sub, len(frame), spec.working)
    lv_codes, levels = pd.factorize(frame[window], sort=True)
    beta, cov, conv, it, proj, Sigma = _fit_unstructured(
        X, y, w, codes, uniq.size, lv_codes, levels.size, spec, beta)
    return FitResult(spec.names, beta, cov, n_sub, len(frame), spec.working,
                     conv, it, proj, Sigma, np.asarray(levels, dtype=float))


def estimating_function(frame: pd.DataFrame, spec: ModelSpec, beta, response="po",
                        weight="weight") -> np.ndarray:
    """Independence-structure estimating function evaluated at ``beta``."""
    X = design_matrix(frame, spec)
    y = frame[response].to_numpy(dtype=float)
    w = frame[weight].to_numpy(dtype=float) if weight else np.ones(len(frame))
    return X.T @ (w * (y - X @ np.asarray(beta)))


@dataclass
class StratumCheck:
    stratum: object
    estimate: float
    se: float
    truth: float
    truth_se: float
    z: float


@dataclass
class OracleReport:
    strata: list[StratumCheck] = field(default_factory=list)

    @property
    def max_abs_z(self) -> float:
        return max(abs(s.z) for s in self.strata)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([s.__dict__ for s in self.strata])


def ipw_stratum_means(frame: pd.DataFrame, stratum: str, cluster: str = "subject_id"):
    """Horvitz-Thompson means of ``R * po / pi`` per stratum with subject-clustered SEs.

    ``frame`` has one row per (subject, window) including rows with ``R = 0``;
    ``po`` may be missing on those rows.
    """
    R = frame["at_risk"].to_numpy(dtype=float)
    contrib = np.where(R > 0, np.nan_to_num(frame["po"].to_numpy(dtype=float)) / frame["pi"].to_numpy(dtype=float), 0.0)
    g = pd.DataFrame({"s": frame[stratum].to_numpy(), "c": frame[cluster].to_numpy(), "a": contrib, "n": 1.0})
    out = {}
    for s, grp in g.groupby("s", sort=True):
        per = grp.groupby("c", sort=False)[["a", "n"]].sum()
        m = per["a"].sum() / per["n"].sum()
        resid = per["a"] - m * per["n"]
        se = math.sqrt(float((resid ** 2).sum())) / per["n"].sum()
        out[s] = (float(m), se)
    return out


def oracle_weight_check(frame: pd.DataFrame, truth: dict, stratum: str = "stratum",
                        cluster: str = "subject_id") -> OracleReport:
    """Compare IPW stratum means with reference values ``truth[s] = (mean, se)``."""
    report = OracleReport()
    for s, (m, se) in ipw_stratum_means(frame, stratum, cluster).items():
        tm, tse = truth[s]
        z = (m - tm) / math.sqrt(se ** 2 + tse ** 2)
        report.strata.append(StratumCheck(s, m, se, tm, tse, z))
    return report
