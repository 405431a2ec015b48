"""Alternating recurrent event histories and the windowed longitudinal layout.

A subject alternates between being at risk for the primary event and being
inside an episode that ends with the secondary event.  For a grid of window
starts ``t`` we record the time to the first event of either kind after
``t``, whether it was observed before censoring, and whether the subject was
at risk for the primary event at ``t``.
"""
from __future__ import annotations

import bisect
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

__all__ = [
    "EventPair",
    "SubjectHistory",
    "WindowGrid",
    "WindowObservation",
    "LongitudinalDataset",
    "validate_subject",
    "eta",
    "in_episode",
    "build_windows",
    "assemble_dataset",
    "derive_alternating_events",
    "default_covariates",
]

PRIMARY = 1
SECONDARY = 2


@dataclass(frozen=True)
class EventPair:
    index: int
    primary: float
    secondary: float | None = None


@dataclass
class SubjectHistory:
    subject_id: str
    pairs: list[EventPair]
    censor_time: float = math.inf
    baseline: dict[str, float] = field(default_factory=dict)
    time_varying: list[tuple[float, dict[str, float]]] = field(default_factory=list)
    has_full_history: bool = True

    @property
    def primary_times(self) -> list[float]:
        return [p.primary for p in self.pairs]

    @property
    def secondary_times(self) -> list[float]:
        return [p.secondary for p in self.pairs if p.secondary is not None]

    def on_study(self) -> "SubjectHistory":
        """Copy keeping only pairs whose primary event is at or after t0 = 0."""
        kept = [p for p in self.pairs if p.primary >= 0]
        return SubjectHistory(self.subject_id, kept, self.censor_time,
                              dict(self.baseline), list(self.time_varying),
                              self.has_full_history)

    @classmethod
    def from_times(cls, subject_id, pairs: Iterable[tuple[float, float | None]],
                   censor_time: float = math.inf, **kwargs) -> "SubjectHistory":
        """Build from ``(primary, secondary)`` tuples; pre-study pairs get negative indices."""
        pairs = list(pairs)
        q = sum(1 for p, _ in pairs if p < 0)
        out = [EventPair(j - q, float(p), None if s is None else float(s))
               for j, (p, s) in enumerate(pairs)]
        return cls(str(subject_id), out, float(censor_time), **kwargs)


@dataclass(frozen=True)
class WindowGrid:
    starts: tuple[float, ...]
    tau: float

    def __post_init__(self):
        starts = tuple(float(s) for s in self.starts)
        object.__setattr__(self, "starts", starts)
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("window starts must be strictly increasing")
        if not starts:
            raise ValueError("window grid is empty")

    @property
    def horizon(self) -> float:
        return self.starts[-1] + self.tau


@dataclass(frozen=True)
class WindowObservation:
    subject_id: str
    t: float
    x: float
    delta: bool
    at_risk: bool
    residual_censoring: float
    covariates: Mapping[str, float]


@dataclass
class LongitudinalDataset:
    rows: list[WindowObservation]
    grid: WindowGrid
    n_t: dict[float, int]
    n_r: dict[float, int]

    def to_frame(self) -> pd.DataFrame:
        names = sorted({k for r in self.rows for k in r.covariates})
        recs = []
        for r in self.rows:
            rec = {"subject_id": r.subject_id, "t": r.t, "x": r.x,
                   "delta": int(r.delta), "at_risk": int(r.at_risk),
                   "residual_censoring": r.residual_censoring}
            for k in names:
                rec[k] = r.covariates.get(k, np.nan)
            recs.append(rec)
        cols = ["subject_id", "t", "x", "delta", "at_risk", "residual_censoring", *names]
        return pd.DataFrame.from_records(recs, columns=cols)


def validate_subject(subject: SubjectHistory) -> list[str]:
    """Return human-readable rule violations; an empty list means the subject is usable."""
    out = []
    pairs = subject.pairs
    C = subject.censor_time
    if not (isinstance(C, (int, float)) and not math.isnan(C)):
        out.append("censor time is not a number")
        C = math.inf
    for pos, p in enumerate(pairs):
        j = p.index
        if not math.isfinite(p.primary) or (p.secondary is not None and not math.isfinite(p.secondary)):
            out.append(f"non-finite event time at j={j}")
            continue
        if pos > 0 and p.index != pairs[pos - 1].index + 1:
            out.append(f"pair indices not consecutive at j={j}")
        if p.secondary is not None and p.primary >= p.secondary:
            out.append(f"primary >= secondary at j={j}")
        if p.secondary is None and pos != len(pairs) - 1:
            out.append(f"open episode before the last pair at j={j}")
        if pos > 0:
            prev = pairs[pos - 1]
            if prev.secondary is not None and p.primary <= prev.secondary:
                out.append(f"pair j={j} starts before pair j={prev.index} ends")
        if p.primary >= 0 and p.primary > C:
            out.append(f"primary event after censoring at j={j}")
        if p.secondary is not None and p.secondary >= 0 and p.secondary > C:
            out.append(f"secondary event after censoring at j={j}")
        if p.primary < 0 and (p.secondary is None or p.secondary > 0):
            out.append(f"open episode at t0=0 at j={j}")
        if (p.index < 0) != (p.primary < 0):
            out.append(f"pre-study index does not match event time at j={j}")
    return out


def _times(subject: SubjectHistory, k: int) -> tuple[list[float], list[int]]:
    if k == PRIMARY:
        return [p.primary for p in subject.pairs], [p.index for p in subject.pairs]
    if k == SECONDARY:
        obs = [p for p in subject.pairs if p.secondary is not None]
        return [p.secondary for p in obs], [p.index for p in obs]
    raise ValueError(f"event kind must be 1 or 2, got {k}")


def eta(subject: SubjectHistory, t: float, k: int) -> int | None:
    """Index of the first observed event of kind ``k`` strictly after ``t``."""
    times, idx = _times(subject, k)
    pos = bisect.bisect_right(times, t)
    return idx[pos] if pos < len(times) else None


def in_episode(subject: SubjectHistory, t: float) -> bool:
    """True when ``t`` lies inside an episode (primary at or before t, secondary after t)."""
    times = subject.primary_times
    pos = bisect.bisect_right(times, t) - 1
    if pos < 0:
        return False
    sec = subject.pairs[pos].secondary
    return sec is None or sec > t


def default_covariates(subject: SubjectHistory, t: float) -> dict[str, float]:
    """Baseline covariates plus the latest time-varying values recorded at or before ``t``."""
    out = dict(subject.baseline)
    for when, values in sorted(subject.time_varying, key=lambda tv: tv[0]):
        if when > t:
            break
        out.update(values)
    return out


CovariateBuilder = Callable[[SubjectHistory, float], Mapping[str, float]]


def build_windows(subject: SubjectHistory, grid: WindowGrid,
                  covariate_builder: CovariateBuilder | None = None) -> list[WindowObservation]:
    builder = covariate_builder or default_covariates
    C = subject.censor_time
    p_times, _ = _times(subject, PRIMARY)
    s_times, _ = _times(subject, SECONDARY)
    rows = []
    for t in grid.starts:
        if not t < C:
            break
        pos1 = bisect.bisect_right(p_times, t)
        pos2 = bisect.bisect_right(s_times, t)
        t1 = p_times[pos1] - t if pos1 < len(p_times) else math.inf
        t2 = s_times[pos2] - t if pos2 < len(s_times) else math.inf
        ct = C - t
        x = min(t1, t2, ct)
        delta = x < ct
        if delta:
            at_risk = t1 < t2
        else:
            # neither event seen before censoring: the episode state at t decides
            at_risk = not in_episode(subject, t)
        cov = dict(builder(subject, t))
        bad = [k for k, v in cov.items() if not math.isfinite(float(v))]
        if bad:
            raise ValueError(f"non-finite covariate(s) {bad} for subject {subject.subject_id} at t={t}")
        rows.append(WindowObservation(subject.subject_id, t, x, delta, at_risk, ct, cov))
    return rows


def assemble_dataset(subjects: Sequence[SubjectHistory], grid: WindowGrid,
                     covariate_builder: CovariateBuilder | None = None) -> LongitudinalDataset:
    seen = set()
    for s in subjects:
        if s.subject_id in seen:
            raise ValueError(f"duplicate subject_id {s.subject_id!r}")
        seen.add(s.subject_id)
    rows = []
    for s in sorted(subjects, key=lambda s: s.subject_id):
        rows.extend(build_windows(s, grid, covariate_builder))
    n_t = {t: 0 for t in grid.starts}
    n_r = {t: 0 for t in grid.starts}
    for r in rows:
        n_t[r.t] += 1
        n_r[r.t] += int(r.at_risk)
    return LongitudinalDataset(rows, grid, n_t, n_r)


def derive_alternating_events(scores: Iterable[tuple[str, float, float]], threshold: float,
                              censor_times: Mapping[str, float] | None = None,
                              baselines: Mapping[str, dict] | None = None) -> list[SubjectHistory]:
    """Turn repeated score measurements into alternating episodes.

    The first measurement of each subject is its baseline.  A run of
    measurements with ``value >= baseline + threshold`` is an episode: it is
    entered at the first such measurement and left at the first later
    measurement back below the threshold.
    """
    by_subject: dict[str, list[tuple[float, float]]] = defaultdict(list)
    for sid, time, value in scores:
        by_subject[str(sid)].append((float(time), float(value)))
    censor_times = censor_times or {}
    baselines = baselines or {}
    for sid in censor_times:
        if str(sid) not in by_subject:
            raise ValueError(f"subject {sid!r} has no measurements")
    out = []
    for sid in sorted(by_subject):
        series = sorted(by_subject[sid])
        if not series:
            raise ValueError(f"subject {sid!r} has no measurements")
        C = float(censor_times.get(sid, series[-1][0]))
        base = series[0][1]
        pairs: list[tuple[float, float | None]] = []
        open_at = None
        for time, value in series[1:]:
            if time > C:
                break
            high = value >= base + threshold
            if open_at is None and high:
                open_at = time
            elif open_at is not None and not high:
                pairs.append((open_at, time))
                open_at = None
        if open_at is not None:
            pairs.append((open_at, None))
        out.append(SubjectHistory.from_times(sid, pairs, C, baseline=dict(baselines.get(sid, {}))))
    return out
