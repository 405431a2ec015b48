"""Data-generating processes, the replicate harness and summary metrics.

Correlated scenario
-------------------
Every subject carries an uninterrupted stream of primary events whose gap
times share a Gaussian copula (equicorrelated latent normals).  The stream
is what the subject would experience if always at risk, so the target
``E[min(T(t), tau) | Z]`` is read directly off it.  Each observed primary
event opens an episode: with probability ``brief`` it ends almost at once,
otherwise it lasts an exponential time with a subject-level rate ``gamma``
that increases with the subject's own primary hazard.  A stream event
falling inside an episode is hidden and restarts the episode clock.  Given
the last stream event ``L`` before ``t``, the subject is therefore at risk
with probability ``brief + (1 - brief) * (1 - exp(-gamma * (t - L)))``.

Independent scenario
--------------------
Alternating renewal process with exponential gaps: primary rate ``lambda_i``
chosen so the restricted mean equals a linear predictor, secondary rate
``gamma_i`` from auxiliary covariates.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy import stats

from .events import SubjectHistory, WindowGrid
from .forest import ALL_FEATURES, ForestConfig
from .gee import ModelSpec, oracle_weight_check
from .history import REGIMES
from .pipeline import (AnalysisPanel, build_panel, fit_panel, forest_seed,
                       history_features, weight_rows, window_means)

log = logging.getLogger(__name__)

# Latent equicorrelation whose stream cell means match TRUE_CORRELATED; the
# realized gap-time correlation is about 0.75 (scripts/calibrate_copula.py).
COPULA_LATENT_R = 0.785
# Episode rate gamma = kappa * lambda ** power (scripts/calibrate_secondary.py).
SECONDARY_KAPPA = 7.0
SECONDARY_POWER = 1.8
SECONDARY_BRIEF = 0.2
BRIEF_LENGTH = 1e-6

CORRELATED_TERMS = ("z:I(t<6)", "z0:I(t<6)", "z:I(t>=6)", "z0:I(t>=6)")
CORRELATED_NAMES = ("beta1", "beta2", "beta3", "beta4")
TRUE_CORRELATED = (0.714, 0.631, 0.826, 0.764)

INDEPENDENT_TERMS = ("z1", "z2", "I(z3>=0):z1")
INDEPENDENT_NAMES = ("beta0", "beta1", "beta2", "beta3")
TRUE_INDEPENDENT = (0.5, 0.25, -0.4, 0.3)

# Correlated scenario: one covariate plus history, so try every feature at every
# split with smaller leaves for sharper probabilities just after an event.
# Independent scenario: many noise covariates, where that setting overfits
# and produces extreme weights, so it keeps the ordinary defaults.
CORRELATED_FOREST = ForestConfig(n_trees=500, mtry=ALL_FEATURES, min_node_size=5)
INDEPENDENT_FOREST = ForestConfig(n_trees=500)

METHODS = REGIMES + ("unweighted", "oracle")


def laplace_censoring(rng: np.random.Generator, n: int, mu: float, b: float, cap: float) -> np.ndarray:
    u = rng.random(n) - 0.5
    L = mu - b * np.sign(u) * np.log1p(-2 * np.abs(u))
    return np.minimum(cap, L)


def piecewise_gap(start, E, h_pre, h_post, changepoint):
    """Invert the calendar-time cumulative hazard from ``start`` at level ``E``."""
    room = np.maximum(changepoint - start, 0.0)
    cap = room * h_pre
    return np.where(E <= cap, E / h_pre, room + (E - cap) / h_post)


def solve_lambda_from_rmst(target: float, tau: float = 1.0, tol: float = 1e-10) -> float:
    """Rate of an exponential whose tau-restricted mean is ``target``."""
    if not 0 < target < tau:
        raise ValueError(f"target must lie in (0, tau={tau}), got {target}")

    def f(lam):
        return -math.expm1(-lam * tau) / lam - target

    lo, hi = 1e-12, 1.0
    while f(hi) > 0:
        hi *= 2
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _rmst_exp(lam, tau):
    return -np.expm1(-lam * tau) / lam


def solve_lambda_vec(target: np.ndarray, tau: float = 1.0, tol: float = 1e-10) -> np.ndarray:
    target = np.asarray(target, dtype=float)
    if np.any((target <= 0) | (target >= tau)):
        raise ValueError("targets must lie in (0, tau)")
    lo = np.full(target.shape, 1e-12)
    hi = np.full(target.shape, 1.0)
    while np.any(_rmst_exp(hi, tau) > target):
        hi = np.where(_rmst_exp(hi, tau) > target, 2 * hi, hi)
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        up = _rmst_exp(mid, tau) > target
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class CorrelatedScenario:
    n: int = 750
    latent_r: float = COPULA_LATENT_R
    hazards: tuple = ((1 / 2, 1 / 4), (1 / 3, 1 / 6))  # (before, after) changepoint, for Z = 0, 1
    changepoint: float = 6.0
    horizon: float = 12.0
    censor: bool = True
    laplace_mu: float = 12.0
    laplace_b: float = 1.5
    tau: float = 1.0
    starts: tuple = tuple(float(t) for t in range(12))
    burn_in: float = -24.0
    lookback: float = -12.0
    kappa: float = SECONDARY_KAPPA
    power: float = SECONDARY_POWER
    brief: float = SECONDARY_BRIEF
    selection: bool = True
    p3_fraction: float = 0.5

    name = "correlated"

    @property
    def grid(self) -> WindowGrid:
        return WindowGrid(self.starts, self.tau)


@dataclass(frozen=True)
class IndependentScenario:
    n: int = 750
    beta: tuple = TRUE_INDEPENDENT
    z_corr: float = 0.2
    lambda_bounds: tuple = (1 / 6, 5 / 8)
    x2_sd: float = 0.5
    horizon: float = 12.0
    censor: bool = True
    laplace_mu: float = 12.0
    laplace_b: float = 1.5
    tau: float = 1.0
    starts: tuple = tuple(float(t) for t in range(12))
    burn_in: float = -24.0
    lookback: float = -12.0
    p3_fraction: float = 0.5
    max_attempts: int = 10_000

    name = "independent"

    @property
    def grid(self) -> WindowGrid:
        return WindowGrid(self.starts, self.tau)


@dataclass
class Cohort:
    subjects: list[SubjectHistory]
    # one row per (subject, window start), censored or not: true pi and target
    oracle: pd.DataFrame
    subject_info: pd.DataFrame
    scenario: object

    def covariate_names(self) -> list[str]:
        return sorted(self.subjects[0].baseline) if self.subjects else []


def _latent_multiplier(A, r):
    # rate of the exponential sharing the subject's conditional median gap on the unit-hazard scale
    return math.log(2) / -stats.norm.logsf(math.sqrt(r) * A)


def correlated_streams(rng, n, sc: CorrelatedScenario, Z, A):
    """Primary-event streams from ``burn_in`` to the horizon: (subject index, time), sorted."""
    h = np.asarray(sc.hazards, dtype=float)
    h_pre, h_post = h[Z, 0], h[Z, 1]
    s = np.full(n, sc.burn_in)
    who, when = [], []
    active = np.arange(n)
    r = sc.latent_r
    while active.size:
        eps = rng.standard_normal(active.size)
        E = -stats.norm.logsf(math.sqrt(r) * A[active] + math.sqrt(1 - r) * eps)
        nxt = s[active] + piecewise_gap(s[active], E, h_pre[active], h_post[active], sc.changepoint)
        keep = nxt <= sc.horizon
        who.append(active[keep])
        when.append(nxt[keep])
        s[active] = nxt
        active = active[keep]
    who = np.concatenate(who)
    when = np.concatenate(when)
    order = np.lexsort((when, who))
    return who[order], when[order]


def _stream_truth(who, when, n, starts, tau):
    """min(T(t), tau) and the last stream time <= t for every subject and window start."""
    bounds = np.searchsorted(who, np.arange(n + 1))
    y = np.full((n, len(starts)), tau)
    last = np.full((n, len(starts)), -np.inf)
    for i in range(n):
        ev = when[bounds[i]:bounds[i + 1]]
        k = np.searchsorted(ev, starts, side="right")
        has_next = k < ev.size
        y[i, has_next] = np.minimum(ev[k[has_next]] - starts[has_next], tau)
        has_last = k > 0
        last[i, has_last] = ev[k[has_last] - 1]
    return y, last


def gen_correlated_cohort(sc: CorrelatedScenario, seed) -> Cohort:
    rng = np.random.default_rng(seed)
    n = sc.n
    Z = rng.integers(0, 2, n)
    A = rng.standard_normal(n)
    full_flag = rng.random(n) < sc.p3_fraction
    C = laplace_censoring(rng, n, sc.laplace_mu, sc.laplace_b, sc.horizon) if sc.censor \
        else np.full(n, sc.horizon)
    who, when = correlated_streams(rng, n, sc, Z, A)
    h_pre = np.asarray(sc.hazards, dtype=float)[Z, 0]
    lam = h_pre * _latent_multiplier(A, sc.latent_r)
    gamma = sc.kappa * lam ** sc.power
    brief = rng.random(who.size) < sc.brief
    D = np.where(brief, BRIEF_LENGTH, BRIEF_LENGTH + rng.exponential(1.0, who.size) / gamma[who])

    bounds = np.searchsorted(who, np.arange(n + 1))
    subjects = []
    for i in range(n):
        pairs = []
        for k in range(bounds[i], bounds[i + 1]):
            s = when[k]
            if not sc.selection:
                # instantaneous episodes: every stream event is observed
                pairs.append((s, s + BRIEF_LENGTH))
                continue
            end = s + D[k]
            if s < 0 < end:
                end = 0.0  # at risk at study start
            if pairs and s < pairs[-1][1]:
                # hidden inside an episode, which restarts from here
                pairs[-1] = (pairs[-1][0], end)
            else:
                pairs.append((s, end))
        subjects.append(_truncate(f"s{i:05d}", pairs, C[i], sc.lookback,
                                  {"z": float(Z[i]), "z0": float(1 - Z[i])}, bool(full_flag[i])))
    starts = np.asarray(sc.starts)
    y, last = _stream_truth(who, when, n, starts, sc.tau)
    age = starts[None, :] - last
    if sc.selection:
        ongoing = -np.expm1(-gamma[:, None] * np.maximum(age - BRIEF_LENGTH, 0.0))
        pi = np.where(last <= 0, 1.0, np.where(age < BRIEF_LENGTH, 0.0, sc.brief + (1 - sc.brief) * ongoing))
    else:
        pi = np.ones_like(y)
    oracle = pd.DataFrame({
        "subject_id": np.repeat([s.subject_id for s in subjects], starts.size),
        "t": np.tile(starts, n),
        "z": np.repeat(Z, starts.size).astype(float),
        "pi_true": pi.ravel(),
        "target": y.ravel(),
    })
    info = pd.DataFrame({"subject_id": [s.subject_id for s in subjects], "z": Z, "latent": A,
                         "lambda": lam, "gamma": gamma, "censor_time": C, "full_history": full_flag})
    return Cohort(subjects, oracle, info, sc)


def _truncate(sid, pairs, C, lookback, baseline, full_flag):
    kept = []
    for p, s in pairs:
        if p >= C:
            break
        if s is not None and s < 0 and s <= lookback:
            continue  # entirely before the lookback origin
        if s is not None and s >= C:
            s = None
        kept.append((p, s))
    return SubjectHistory.from_times(sid, kept, C, baseline=baseline, has_full_history=full_flag)


def correlated_oracle_check(sc: CorrelatedScenario, seed, mc_n: int = 100_000, mc_seed=None):
    """True-probability IPW cell means of the pseudo-observations against stream Monte Carlo."""
    cohort = gen_correlated_cohort(sc, seed)
    f = build_panel(cohort.subjects, sc.grid).frame
    f = f.merge(cohort.oracle[["subject_id", "t", "pi_true"]], on=["subject_id", "t"], how="left")
    f = f.assign(pi=f["pi_true"], stratum=list(zip(f["z"].astype(int), f["t"] < sc.changepoint)))
    mc = correlated_truth_mc(sc, mc_n, mc_seed if mc_seed is not None else np.random.SeedSequence(seed).spawn(1)[0])
    truth = {(int(r.z), bool(r.pre)): (float(r["mean"]), float(r["se"])) for _, r in mc.iterrows()}
    return oracle_weight_check(f, truth)


def correlated_truth_mc(sc: CorrelatedScenario, n: int, seed) -> pd.DataFrame:
    """Monte Carlo cell means of min(T(t), tau) from stream data only, with clustered SEs."""
    rng = np.random.default_rng(seed)
    Z = rng.integers(0, 2, n)
    A = rng.standard_normal(n)
    who, when = correlated_streams(rng, n, sc, Z, A)
    starts = np.asarray(sc.starts)
    y, _ = _stream_truth(who, when, n, starts, sc.tau)
    rows = []
    for z in (1, 0):
        for pre in (True, False):
            cols = starts < sc.changepoint if pre else starts >= sc.changepoint
            per = y[Z == z][:, cols].mean(axis=1)
            rows.append({"z": z, "pre": pre, "mean": per.mean(), "se": per.std(ddof=1) / math.sqrt(per.size)})
    return pd.DataFrame(rows)


def _draw_independent_covariates(rng, m, sc: IndependentScenario):
    z1 = rng.beta(5, 1, m)
    zz = rng.multivariate_normal([0, 0], [[1, sc.z_corr], [sc.z_corr, 1]], m)
    return z1, zz[:, 0], zz[:, 1]


def independent_mean(sc: IndependentScenario, z1, z2, z3):
    b0, b1, b2, b3 = sc.beta
    return b0 + b1 * z1 + b2 * z2 + b3 * (z3 >= 0) * z1


def gen_independent_cohort(sc: IndependentScenario, seed) -> Cohort:
    rng = np.random.default_rng(seed)
    n = sc.n
    z1 = np.empty(n)
    z2 = np.empty(n)
    z3 = np.empty(n)
    todo = np.arange(n)
    attempts = np.zeros(n, dtype=int)
    lo_mu, hi_mu = _rmst_exp(sc.lambda_bounds[1], sc.tau), _rmst_exp(sc.lambda_bounds[0], sc.tau)
    while todo.size:
        a, b, c = _draw_independent_covariates(rng, todo.size, sc)
        attempts[todo] += 1
        mu = independent_mean(sc, a, b, c)
        ok = (mu >= lo_mu) & (mu <= hi_mu)
        z1[todo[ok]], z2[todo[ok]], z3[todo[ok]] = a[ok], b[ok], c[ok]
        todo = todo[~ok]
        if todo.size and attempts[todo].max() >= sc.max_attempts:
            raise RuntimeError(f"rejection sampling exceeded {sc.max_attempts} attempts")
    mu = independent_mean(sc, z1, z2, z3)
    lam = solve_lambda_vec(mu, sc.tau)
    x1, x4, x5 = rng.standard_normal((3, n))
    x2 = rng.normal(1.0, sc.x2_sd, n)
    x3 = rng.chisquare(3, n)
    x6 = (rng.random(n) < 0.5).astype(float)
    gamma = np.exp(x2 + x3 / 2 + 10 * x6 ** 2 - 5 * (z1 + z3))
    full_flag = rng.random(n) < sc.p3_fraction
    C = laplace_censoring(rng, n, sc.laplace_mu, sc.laplace_b, sc.horizon) if sc.censor \
        else np.full(n, sc.horizon)

    pairs = [[] for _ in range(n)]
    s = np.full(n, sc.burn_in)
    active = np.arange(n)
    while active.size:
        p = s[active] + rng.exponential(1.0, active.size) / lam[active]
        e = p + rng.exponential(1.0, active.size) / gamma[active]
        e = np.where((p < 0) & (e > 0), 0.0, e)
        for i, a, b in zip(active, p, e):
            if a <= sc.horizon:
                pairs[i].append((a, b))
        s[active] = e
        active = active[p <= sc.horizon]
    subjects = []
    for i in range(n):
        base = {"z1": z1[i], "z2": z2[i], "z3": z3[i], "x1": x1[i], "x2": x2[i],
                "x3": x3[i], "x4": x4[i], "x5": x5[i], "x6": x6[i]}
        subjects.append(_truncate(f"s{i:05d}", pairs[i], C[i], sc.lookback,
                                  {k: float(v) for k, v in base.items()}, bool(full_flag[i])))
    starts = np.asarray(sc.starts)
    tot = lam + gamma
    pi = 1.0 + (lam / tot)[:, None] * np.expm1(-tot[:, None] * starts[None, :])
    oracle = pd.DataFrame({
        "subject_id": np.repeat([s.subject_id for s in subjects], starts.size),
        "t": np.tile(starts, n),
        "pi_true": pi.ravel(),
        "target": np.repeat(mu, starts.size),
    })
    info = pd.DataFrame({"subject_id": [s.subject_id for s in subjects], "lambda": lam, "gamma": gamma,
                         "mu": mu, "censor_time": C, "full_history": full_flag, "attempts": attempts})
    return Cohort(subjects, oracle, info, sc)


def lambda_gamma_correlation(cohort: Cohort) -> dict:
    info = cohort.subject_info
    return {"pearson": float(np.corrcoef(info["lambda"], info["gamma"])[0, 1]),
            "spearman": float(stats.spearmanr(info["lambda"], info["gamma"]).statistic)}


# ---------------------------------------------------------------- replicates

@dataclass(frozen=True)
class ScenarioSetup:
    generate: object
    terms: tuple
    intercept: bool
    names: tuple
    truth: tuple
    features: tuple
    stratum: str | None
    forest: ForestConfig


def scenario_setup(sc) -> ScenarioSetup:
    if isinstance(sc, CorrelatedScenario):
        return ScenarioSetup(gen_correlated_cohort, CORRELATED_TERMS, False, CORRELATED_NAMES,
                             TRUE_CORRELATED, ("z",), "z", CORRELATED_FOREST)
    if isinstance(sc, IndependentScenario):
        feats = ("z1", "z2", "z3", "x1", "x2", "x3", "x4", "x5", "x6")
        return ScenarioSetup(gen_independent_cohort, INDEPENDENT_TERMS, True, INDEPENDENT_NAMES,
                             TRUE_INDEPENDENT, feats, None, INDEPENDENT_FOREST)
    raise TypeError(f"unknown scenario {sc!r}")


def replicate_seed(master: int, r: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master), spawn_key=(int(r),))


@dataclass
class ReplicateResult:
    index: int
    estimates: pd.DataFrame
    windows: pd.DataFrame
    error: str | None = None


def run_replicate(sc, methods, r: int, master_seed: int, forest_cfg: ForestConfig,
                  working: str = "independence") -> ReplicateResult:
    setup = scenario_setup(sc)
    seq = replicate_seed(master_seed, r)
    cohort = setup.generate(sc, seq)
    panel = build_panel(cohort.subjects, sc.grid)
    panel.frame = panel.frame.merge(cohort.oracle[["subject_id", "t", "pi_true"]],
                                    on=["subject_id", "t"], how="left")
    spec = ModelSpec(setup.terms, intercept=setup.intercept, working=working)
    truth = cohort.oracle.copy()
    if setup.stratum is None:
        truth["stratum"] = 0
    else:
        truth["stratum"] = truth[setup.stratum]
    target = truth.groupby(["t", "stratum"], sort=True)["target"].mean().rename("truth").reset_index()
    est_rows, win_rows = [], []
    for m in methods:
        pi = _method_weights(m, panel, cohort, setup, forest_cfg, seq, sc)
        fit = fit_panel(panel, spec, pi)
        lo, hi = fit.ci()
        for k, name in enumerate(setup.names):
            est_rows.append({"replicate": r, "method": m, "term": name,
                             "estimate": fit.estimates[k], "se": fit.se[k],
                             "ci_lo": lo[k], "ci_hi": hi[k], "truth": setup.truth[k]})
        wm = window_means(panel, pi, setup.stratum)
        wm = wm.merge(target, on=["t", "stratum"], how="left")
        wm.insert(0, "method", m)
        wm.insert(0, "replicate", r)
        win_rows.append(wm)
    return ReplicateResult(r, pd.DataFrame(est_rows), pd.concat(win_rows, ignore_index=True))


def _method_weights(method, panel: AnalysisPanel, cohort, setup, forest_cfg, seq, sc):
    if method == "unweighted":
        return None
    if method == "oracle":
        return np.clip(panel.frame["pi_true"].to_numpy(), 1e-12, None)
    idx = REGIMES.index(method)
    seed = forest_seed(seq.entropy, *seq.spawn_key, 1, idx)
    cfg = replace(forest_cfg, seed=seed)
    w = weight_rows(panel, cohort.subjects, method, list(setup.features), cfg, sc.lookback)
    aligned = panel.frame[["subject_id", "t"]].merge(w, on=["subject_id", "t"], how="left")
    return aligned["pi_hat"].to_numpy()


def _safe_replicate(args):
    sc, methods, r, seed, cfg, working = args
    try:
        return run_replicate(sc, methods, r, seed, cfg, working)
    except Exception as exc:  # recorded, excluded and counted by the caller
        log.exception("replicate %d failed", r)
        return ReplicateResult(r, pd.DataFrame(), pd.DataFrame(), f"{type(exc).__name__}: {exc}")


@dataclass
class SimulationOutput:
    metrics: pd.DataFrame
    estimates: pd.DataFrame
    windows: pd.DataFrame
    failures: list = field(default_factory=list)


def run_replicates(sc, methods, replicates: int, master_seed: int,
                   forest_cfg: ForestConfig | None = None, n_jobs: int = 1,
                   working: str = "independence") -> SimulationOutput:
    if replicates < 2:
        raise ValueError("need at least two replicates")
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ValueError(f"unknown method(s) {bad}; choose from {METHODS}")
    forest_cfg = forest_cfg or scenario_setup(sc).forest
    jobs = [(sc, tuple(methods), r, master_seed, forest_cfg, working) for r in range(replicates)]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as ex:
            results = list(ex.map(_safe_replicate, jobs))
    else:
        results = [_safe_replicate(j) for j in jobs]
    results.sort(key=lambda res: res.index)
    failures = [(res.index, res.error) for res in results if res.error]
    ok = [res for res in results if not res.error]
    if not ok:
        raise RuntimeError(f"all replicates failed; first error: {failures[0][1]}")
    est = pd.concat([res.estimates for res in ok], ignore_index=True)
    win = pd.concat([res.windows for res in ok], ignore_index=True)
    return SimulationOutput(metrics_table(est, list(methods)), est, win, failures)


def metrics_table(est: pd.DataFrame, method_order: list[str] | None = None) -> pd.DataFrame:
    rows = []
    methods = method_order or list(dict.fromkeys(est["method"]))
    for m in methods:
        sub = est[est["method"] == m]
        for term in dict.fromkeys(sub["term"]):
            e = sub[sub["term"] == term]
            beta = float(e["truth"].iloc[0])
            bias = float((e["estimate"] - beta).mean())
            esd = float(e["estimate"].std(ddof=1))
            se = float(e["se"].mean())
            cover = float(((e["ci_lo"] <= beta) & (beta <= e["ci_hi"])).mean())
            rows.append({"method": m, "term": term, "truth": beta, "bias": bias,
                         "rel_abs_bias": abs(bias) / abs(beta), "coverage": cover,
                         "mean_se": se, "esd": esd, "se_esd": se / esd if esd > 0 else np.nan,
                         "replicates": len(e)})
    return pd.DataFrame(rows)


def window_bias_profile(windows: pd.DataFrame) -> pd.DataFrame:
    d = windows.assign(diff=windows["estimate"] - windows["truth"])
    g = d.groupby(["method", "t", "stratum"], sort=False)["diff"]
    out = pd.DataFrame({"bias": g.mean(), "mc_se": g.std(ddof=1) / np.sqrt(g.count()),
                        "replicates": g.count()}).reset_index()
    return out


# ------------------------------------------------------- synthetic cohort data

def careqol_like_data(n: int = 257, weeks: int = 12, seed=0, threshold: float = 2.0):
    """Weekly depression-like scores and covariates for a synthetic caregiver cohort.

    Returns ``(measurements, subjects, time_varying)`` frames in the CSV layouts
    read by the command line tool.
    """
    rng = np.random.default_rng(seed)
    ids = [f"c{i:04d}" for i in range(n)]
    sub = pd.DataFrame({
        "subject_id": ids,
        "nonhispanic": (rng.random(n) < 0.85).astype(float),
        "age": np.round((rng.normal(48, 13, n) - 48) / 13, 3),
        "white": (rng.random(n) < 0.75).astype(float),
        "male": (rng.random(n) < 0.2).astype(float),
        "tbi_partial": 0.0,
        "tbi_independent": 0.0,
        "push": (rng.random(n) < 0.5).astype(float),
    })
    level = rng.choice(3, n, p=[0.4, 0.35, 0.25])
    sub.loc[level == 1, "tbi_partial"] = 1.0
    sub.loc[level == 2, "tbi_independent"] = 1.0
    # subjects drop out before the last week now and then
    last = np.where(rng.random(n) < 0.25, rng.integers(4, weeks, n), weeks)
    sub["censor_time"] = last.astype(float)
    frailty = rng.normal(0, 1, n)
    meas, tv = [], []
    for i, sid in enumerate(ids):
        base = 50 + rng.normal(0, 5)
        state = 0.0
        for w in range(int(last[i]) + 1):
            sleep = rng.normal(0, 1)
            steps = rng.normal(0, 1)
            tv.append((sid, float(w), "sleep", round(sleep, 4)))
            tv.append((sid, float(w), "steps", round(steps, 4)))
            if w == 0:
                meas.append((sid, 0.0, round(base, 3)))
                continue
            p_in = 1 / (1 + np.exp(-(-1.6 + 0.8 * frailty[i] - 0.3 * sub.at[i, "push"] - 0.2 * steps)))
            p_stay = 1 / (1 + np.exp(-(0.2 + 0.7 * frailty[i] - 0.4 * steps - 0.5 * sub.at[i, "tbi_independent"])))
            state = float(rng.random() < (p_stay if state else p_in))
            val = base + (threshold + 1.5 + abs(rng.normal(0, 1)) if state else rng.normal(0, 0.6))
            meas.append((sid, float(w), round(val, 3)))
    measurements = pd.DataFrame(meas, columns=["subject_id", "time", "value"])
    time_varying = pd.DataFrame(tv, columns=["subject_id", "time", "name", "value"])
    return measurements, sub, time_varying
