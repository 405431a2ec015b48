"""CSV readers and writers for the command line tool."""
from __future__ import annotations

import math
from collections import defaultdict

import numpy as np
import pandas as pd

from .events import SubjectHistory, validate_subject

EVENT_COLUMNS = ["subject_id", "time", "kind"]
WEIGHT_COLUMNS = ["subject_id", "t", "pi_hat", "n_oob_trees"]
PO_COLUMNS = ["subject_id", "t", "po", "n_r"]
FIT_COLUMNS = ["term", "estimate", "se", "ci_lo", "ci_hi", "p_value"]


class InputError(ValueError):
    """Invalid user input; maps to exit status 2."""


def read_csv(path, required: list[str], what: str) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype={"subject_id": str})
    except FileNotFoundError:
        raise InputError(f"{what} file not found: {path}") from None
    except pd.errors.EmptyDataError:
        raise InputError(f"{what} file is empty: {path}") from None
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise InputError(f"{what} file {path} is missing column(s): {', '.join(missing)}")
    return df


def read_subjects(events_path, subjects_path, time_varying_path=None) -> list[SubjectHistory]:
    subj = read_csv(subjects_path, ["subject_id", "censor_time"], "subjects")
    if subj["subject_id"].duplicated().any():
        dup = subj.loc[subj["subject_id"].duplicated(), "subject_id"].iloc[0]
        raise InputError(f"subjects file lists subject {dup!r} more than once")
    ev = read_csv(events_path, EVENT_COLUMNS, "events")
    bad = ~ev["kind"].isin(["primary", "secondary"])
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise InputError(f"events row {row + 2}: kind must be 'primary' or 'secondary', got {ev['kind'].iloc[row]!r}")
    known = set(subj["subject_id"])
    stray = sorted(set(ev["subject_id"]) - known)
    if stray:
        raise InputError(f"events reference unknown subject(s): {', '.join(stray[:5])}")

    tv = defaultdict(list)
    if time_varying_path:
        tvf = read_csv(time_varying_path, ["subject_id", "time", "name", "value"], "time-varying covariates")
        for (sid, time), grp in tvf.groupby(["subject_id", "time"], sort=True):
            tv[sid].append((float(time), {str(k): float(v) for k, v in zip(grp["name"], grp["value"])}))

    flag_col = "full_history" if "full_history" in subj.columns else None
    base_cols = [c for c in subj.columns if c not in ("subject_id", "censor_time", "full_history")]
    ev_by = {sid: g for sid, g in ev.groupby("subject_id", sort=False)}
    out = []
    for rec in subj.itertuples(index=False):
        sid = str(rec.subject_id)
        pairs = _pair_events(sid, ev_by.get(sid))
        C = float(rec.censor_time) if not pd.isna(rec.censor_time) else math.inf
        base = {}
        for c in base_cols:
            v = getattr(rec, c)
            try:
                base[c] = float(v)
            except (TypeError, ValueError):
                raise InputError(f"subject {sid}: covariate {c!r} is not numeric ({v!r})") from None
        flag = bool(getattr(rec, flag_col)) if flag_col else True
        s = SubjectHistory.from_times(sid, pairs, C, baseline=base, time_varying=tv.get(sid, []),
                                      has_full_history=flag)
        problems = validate_subject(s)
        if problems:
            raise InputError(f"subject {sid}: {'; '.join(problems)}")
        out.append(s)
    return out


def _pair_events(sid, grp):
    if grp is None:
        return []
    grp = grp.sort_values("time", kind="stable")
    pairs = []
    open_at = None
    for time, kind in zip(grp["time"].astype(float), grp["kind"]):
        if kind == "primary":
            if open_at is not None:
                raise InputError(f"subject {sid}: two primary events in a row (t={open_at}, t={time})")
            open_at = time
        else:
            if open_at is None:
                raise InputError(f"subject {sid}: secondary event at t={time} without a preceding primary")
            pairs.append((open_at, time))
            open_at = None
    if open_at is not None:
        pairs.append((open_at, None))
    return pairs


def events_frame(subjects: list[SubjectHistory]) -> pd.DataFrame:
    rows = []
    for s in subjects:
        for p in s.pairs:
            rows.append((s.subject_id, p.primary, "primary"))
            if p.secondary is not None:
                rows.append((s.subject_id, p.secondary, "secondary"))
    return pd.DataFrame(rows, columns=EVENT_COLUMNS)


def write_csv(df: pd.DataFrame, path, columns: list[str] | None = None) -> None:
    if columns is not None:
        df = df.loc[:, columns]
    df.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
