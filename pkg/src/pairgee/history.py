"""Dynamic event-history covariates used to predict at-risk status.

Seven summaries are computed looking back from a window start ``t`` to a
lookback origin ``t_h``:

* ``gap_mean``        mean length of at-risk periods that ended with a primary event
* ``since_primary``   time since the most recent primary event
* ``last_gap``        length of the at-risk period that ended with that event
* ``count``           number of primary events in ``(t_h, t)``
* ``episode_mean``, ``since_episode``, ``last_episode``
                      the same three summaries for episodes (primary to
                      secondary), taken as of the most recent primary event

The episode summaries stop at the last primary event on purpose: the time of
the last secondary event relative to the last primary event reveals whether
the subject is inside an episode at ``t``, which would make the at-risk
indicator a deterministic function of the covariates.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, fields

import pandas as pd

from .events import SubjectHistory, WindowGrid

REGIMES = ("full", "p1", "p2", "p3", "p4", "reflective", "none")

_NEG_INF = -math.inf


@dataclass(frozen=True)
class HistoryConfig:
    regime: str = "full"
    lookback: float = -12.0
    p1_pairs: int = 2
    p2_pairs: int = 1

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown history regime {self.regime!r}; expected one of {REGIMES}")
        if self.lookback > 0:
            raise ValueError("lookback origin must be <= 0")


@dataclass(frozen=True)
class HistoryVector:
    gap_mean: float
    since_primary: float
    last_gap: float
    count: int
    episode_mean: float
    since_episode: float
    last_episode: float

    def as_dict(self, prefix: str = "h_") -> dict[str, float]:
        return {prefix + f.name: float(getattr(self, f.name)) for f in fields(self)}


HISTORY_NAMES = tuple("h_" + f.name for f in fields(HistoryVector))


def _lookback(pairs: list[tuple[float, float | None]], t: float, origin: float,
              h3_fallback: float) -> HistoryVector:
    # pairs sorted by primary time; primaries at -inf stand for episodes opened before the origin
    prim = [p for p, _ in pairs]
    hi = bisect.bisect_left(prim, t)  # primaries strictly before t
    gaps = []
    for j in range(hi):
        p = prim[j]
        if not p > origin:
            continue
        prev = pairs[j - 1][1] if j > 0 else None
        start = origin if prev is None else max(prev, origin)
        gaps.append(p - start)
    fb = t - origin
    if not gaps:
        return HistoryVector(fb, fb, h3_fallback, 0, fb, fb, h3_fallback)
    last = hi - 1
    p_last = prim[last]
    # episodes completed before the most recent primary event
    eps = []
    for j in range(last):
        s = pairs[j][1]
        if s is None or not s > origin:
            continue
        eps.append((s, s - max(prim[j], origin)))
    if eps:
        ep_mean = sum(d for _, d in eps) / len(eps)
        since_ep = t - eps[-1][0]
        last_ep = eps[-1][1]
    else:
        ep_mean, since_ep, last_ep = fb, fb, h3_fallback
    return HistoryVector(
        gap_mean=sum(gaps) / len(gaps),
        since_primary=t - p_last,
        last_gap=gaps[-1],
        count=len(gaps),
        episode_mean=ep_mean,
        since_episode=since_ep,
        last_episode=last_ep,
    )


def available_pairs(subject: SubjectHistory, cfg: HistoryConfig) -> list[tuple[float, float | None]]:
    """Pairs visible under the configured regime (before any cut at ``t``)."""
    regime = cfg.regime
    if regime == "p3":
        regime = "full" if subject.has_full_history else "p4"
    on = [(p.primary, p.secondary) for p in subject.pairs if p.primary >= 0]
    pre = [(p.primary, p.secondary) for p in subject.pairs
           if p.primary < 0 and (p.secondary is None or p.secondary > cfg.lookback)]
    if regime == "full":
        return pre + on
    if regime in ("p1", "p2"):
        k = cfg.p1_pairs if regime == "p1" else cfg.p2_pairs
        counted = [pr for pr in pre if pr[0] > cfg.lookback]
        return (counted[-k:] if k > 0 else []) + on
    if regime in ("p4", "reflective"):
        return on
    raise ValueError(f"regime {cfg.regime!r} has no event history")


def history_at(subject: SubjectHistory, t: float, cfg: HistoryConfig) -> HistoryVector:
    if cfg.regime == "none":
        raise ValueError("regime 'none' carries no history covariates")
    if cfg.regime == "reflective":
        cfg = HistoryConfig("p4", cfg.lookback, cfg.p1_pairs, cfg.p2_pairs)
    return _lookback(available_pairs(subject, cfg), t, cfg.lookback, -cfg.lookback)


def _follow_up_end(subject: SubjectHistory, grid: WindowGrid) -> float:
    return min(subject.censor_time, grid.horizon)


def reflective_history_at(subject: SubjectHistory, t: float, grid: WindowGrid,
                          cfg: HistoryConfig) -> HistoryVector:
    """History from whichever side of ``t`` has strictly more primary events.

    The future side is the past computation applied to the time axis
    reflected about ``t``; an episode ``[a, b]`` becomes ``[2t - b, 2t - a]``
    so at-risk periods stay at-risk periods.
    """
    end = _follow_up_end(subject, grid)
    on = [(p.primary, p.secondary) for p in subject.pairs if p.primary >= 0]
    before = sum(1 for p, _ in on if p < t)
    after = sum(1 for p, _ in on if t < p < end)
    if after <= before:
        return _lookback(on, t, cfg.lookback, -cfg.lookback)
    mirrored = []
    for p, s in on:
        if p >= end:
            continue
        if s is None or s >= end:
            mirrored.append((_NEG_INF, 2 * t - p))
        else:
            mirrored.append((2 * t - s, 2 * t - p))
    mirrored.sort(key=lambda pr: pr[0])
    return _lookback(mirrored, t, 2 * t - end, -cfg.lookback)


def history_frame(subjects, grid: WindowGrid, cfg: HistoryConfig) -> pd.DataFrame:
    """History covariates for every (subject, window start) with ``t < C``."""
    recs = []
    for s in subjects:
        if cfg.regime == "none":
            for t in grid.starts:
                if t < s.censor_time:
                    recs.append({"subject_id": s.subject_id, "t": t})
            continue
        pairs = None if cfg.regime == "reflective" else available_pairs(s, cfg)
        for t in grid.starts:
            if not t < s.censor_time:
                break
            if pairs is None:
                h = reflective_history_at(s, t, grid, cfg)
            else:
                h = _lookback(pairs, t, cfg.lookback, -cfg.lookback)
            rec = {"subject_id": s.subject_id, "t": t}
            rec.update(h.as_dict())
            recs.append(rec)
    cols = ["subject_id", "t"] + ([] if cfg.regime == "none" else list(HISTORY_NAMES))
    return pd.DataFrame.from_records(recs, columns=cols)
