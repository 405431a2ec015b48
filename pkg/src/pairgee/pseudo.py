"""Kaplan-Meier curves, restricted means and jackknife pseudo-observations."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class KMCurve:
    jump_times: np.ndarray
    survival: np.ndarray
    n_at_risk: np.ndarray
    n_events: np.ndarray

    def __call__(self, u):
        """S(u), right-continuous."""
        pos = np.searchsorted(self.jump_times, u, side="right") - 1
        s = np.where(pos >= 0, self.survival[np.maximum(pos, 0)], 1.0)
        return s if np.ndim(u) else float(s)


def _check(times, deltas):
    times = np.asarray(times, dtype=float)
    deltas = np.asarray(deltas).astype(bool)
    if times.ndim != 1 or times.shape != deltas.shape:
        raise ValueError("times and deltas must be 1-d and of equal length")
    if times.size == 0:
        raise ValueError("Kaplan-Meier needs at least one observation")
    if np.any(times < 0) or not np.all(np.isfinite(times)):
        raise ValueError("times must be finite and non-negative")
    return times, deltas


def km_fit(times, deltas) -> KMCurve:
    """Product-limit estimator; events are processed before censorings at tied times."""
    times, deltas = _check(times, deltas)
    u, inv = np.unique(times, return_inverse=True)
    n_total = np.bincount(inv, minlength=u.size)
    d = np.bincount(inv, weights=deltas.astype(float), minlength=u.size)
    at_risk = times.size - np.concatenate(([0], np.cumsum(n_total)[:-1]))
    keep = d > 0
    u, d, at_risk = u[keep], d[keep], at_risk[keep]
    surv = np.cumprod(1.0 - d / at_risk)
    return KMCurve(u, surv, at_risk.astype(int), d.astype(int))


def rmst(curve: KMCurve, tau: float) -> float:
    """Integral of the step function S over [0, tau]; S is held flat past the last jump."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    knots = np.concatenate(([0.0], np.minimum(curve.jump_times, tau), [tau]))
    levels = np.concatenate(([1.0], curve.survival))
    return float(np.sum(levels * np.diff(knots)))


def _pseudo_naive(times, deltas, tau):
    n = times.size
    theta = rmst(km_fit(times, deltas), tau)
    mask = np.ones(n, dtype=bool)
    loo = np.empty(n)
    for i in range(n):
        mask[i] = False
        loo[i] = rmst(km_fit(times[mask], deltas[mask]), tau)
        mask[i] = True
    return n * theta - (n - 1) * loo


def _pseudo_fast(times, deltas, tau):
    # Leave-one-out restricted means in O(n log n): removing subject i changes
    # the at-risk counts for distinct times u_k <= x_i only, so the curve before
    # x_i uses adjusted factors and the curve after x_i is the full curve rescaled.
    n = times.size
    u, inv = np.unique(times, return_inverse=True)
    K = u.size
    n_total = np.bincount(inv, minlength=K).astype(float)
    d = np.bincount(inv, weights=deltas.astype(float), minlength=K)
    Y = n - np.concatenate(([0.0], np.cumsum(n_total)[:-1]))

    right = np.minimum(np.append(u[1:], np.inf), tau)
    width = np.maximum(right - np.minimum(u, tau), 0.0)
    head = min(u[0], tau)

    with np.errstate(divide="ignore", invalid="ignore"):
        f_full = 1.0 - d / Y
        f_drop = np.where(Y > 1, 1.0 - d / (Y - 1), 1.0)
    S = np.cumprod(f_full)
    # prefix survival with one fewer at risk at every earlier time
    P = np.cumprod(f_drop)
    P_before = np.concatenate(([1.0], P[:-1]))  # product over l < k
    area_drop = np.concatenate(([0.0], np.cumsum(P * width)[:-1]))  # sum over l < k
    tail = np.cumsum((S * width)[::-1])[::-1]  # sum over l >= k of S_l * w_l

    k = inv
    yk = Y[k]
    dk = d[k] - deltas
    fi = np.where(yk > 1, 1.0 - dk / np.where(yk > 1, yk - 1, 1.0), 1.0)
    s_at = S[k]
    level = P_before[k] * fi
    after = np.empty(n)
    pos = s_at > 0
    after[pos] = level[pos] * tail[k[pos]] / s_at[pos]
    # S can only reach zero at the largest time, where the tail is one segment
    after[~pos] = level[~pos] * width[k[~pos]]
    loo = head + area_drop[k] + after

    theta = head + float(np.sum(S * width))
    return n * theta - (n - 1) * loo


def pseudo_observations(times, deltas, tau: float, method: str = "fast") -> np.ndarray:
    """Jackknife pseudo-observations of the tau-restricted mean."""
    times, deltas = _check(times, deltas)
    if times.size < 2:
        raise ValueError("pseudo-observations need at least two subjects in the window")
    if not tau > 0:
        raise ValueError("tau must be positive")
    if method == "naive":
        return _pseudo_naive(times, deltas, tau)
    if method == "fast":
        return _pseudo_fast(times, deltas, tau)
    raise ValueError(f"unknown method {method!r}")


def pseudo_panel(windows: pd.DataFrame, tau: float, method: str = "fast") -> pd.DataFrame:
    """Pseudo-observations for complete cases (at-risk rows), one window start at a time.

    ``windows`` needs columns ``subject_id, t, x, delta, at_risk``.  Windows
    with fewer than two at-risk subjects are dropped with a warning.
    """
    cc = windows[windows["at_risk"].astype(bool)]
    parts = []
    for t, grp in cc.groupby("t", sort=True):
        if len(grp) < 2:
            warnings.warn(f"window t={t} has {len(grp)} at-risk subject(s); excluded", RuntimeWarning)
            continue
        po = pseudo_observations(grp["x"].to_numpy(), grp["delta"].to_numpy(), tau, method)
        parts.append(pd.DataFrame({"subject_id": grp["subject_id"].to_numpy(), "t": t,
                                   "po": po, "n_r": len(grp)}))
    if not parts:
        return pd.DataFrame(columns=["subject_id", "t", "po", "n_r"])
    return pd.concat(parts, ignore_index=True)
