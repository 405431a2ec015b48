"""Glue between the stages: windows, pseudo-observations, weights and the fit."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from .events import CovariateBuilder, SubjectHistory, WindowGrid, assemble_dataset
from .forest import ForestConfig, estimate_weights
from .gee import FitResult, ModelSpec, fit_weighted_gee
from .history import HISTORY_NAMES, HistoryConfig, history_frame
from .pseudo import pseudo_panel

KEYS = ["subject_id", "t"]


@dataclass
class AnalysisPanel:
    """All window rows with pseudo-observations attached to the at-risk ones."""

    frame: pd.DataFrame
    grid: WindowGrid
    covariates: list[str]


def build_panel(subjects: Sequence[SubjectHistory], grid: WindowGrid,
                covariate_builder: CovariateBuilder | None = None) -> AnalysisPanel:
    ds = assemble_dataset(subjects, grid, covariate_builder)
    frame = ds.to_frame()
    covs = [c for c in frame.columns if c not in
            ("subject_id", "t", "x", "delta", "at_risk", "residual_censoring")]
    with warnings.catch_warnings():
        warnings.simplefilter("always", RuntimeWarning)
        po = pseudo_panel(frame, grid.tau)
    frame = frame.merge(po, on=KEYS, how="left")
    return AnalysisPanel(frame, grid, covs)


def forest_seed(master: int, *key: int) -> int:
    return int(np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key)).generate_state(1)[0])


def history_features(subjects, grid: WindowGrid, regime: str, lookback: float) -> pd.DataFrame:
    return history_frame(subjects, grid, HistoryConfig(regime=regime, lookback=lookback))


def weight_rows(panel: AnalysisPanel, subjects, regime: str, features: list[str],
                forest_cfg: ForestConfig, lookback: float = -12.0,
                history: pd.DataFrame | None = None) -> pd.DataFrame:
    """Out-of-bag at-risk probabilities for every window row under a history regime."""
    frame = panel.frame
    feats = list(features)
    if regime != "none":
        if history is None:
            history = history_features(subjects, panel.grid, regime, lookback)
        frame = frame.merge(history, on=KEYS, how="left", validate="one_to_one")
        feats += list(HISTORY_NAMES)
    if "t" not in feats:
        feats.append("t")
    table = estimate_weights(frame, feats, forest_cfg)
    return table.to_frame()


def fit_panel(panel: AnalysisPanel, spec: ModelSpec, pi_hat: np.ndarray | None) -> FitResult:
    """Fit the estimating equations on at-risk rows with weight ``1 / pi_hat`` (or 1)."""
    f = panel.frame
    use = (f["at_risk"] == 1) & f["po"].notna()
    rows = f.loc[use].copy()
    rows["weight"] = 1.0 if pi_hat is None else 1.0 / np.asarray(pi_hat, dtype=float)[use.to_numpy()]
    return fit_weighted_gee(rows, spec, response="po", weight="weight")


def window_means(panel: AnalysisPanel, pi_hat: np.ndarray | None, stratum: str | None) -> pd.DataFrame:
    """Weighted mean pseudo-observation per window start (and stratum)."""
    f = panel.frame
    use = ((f["at_risk"] == 1) & f["po"].notna()).to_numpy()
    w = np.ones(len(f)) if pi_hat is None else 1.0 / np.asarray(pi_hat, dtype=float)
    d = pd.DataFrame({"t": f["t"].to_numpy()[use],
                      "stratum": f[stratum].to_numpy()[use] if stratum else 0,
                      "wpo": (w * f["po"].to_numpy())[use], "w": w[use]})
    g = d.groupby(["t", "stratum"], sort=True)[["wpo", "w"]].sum()
    return pd.DataFrame({"estimate": g["wpo"] / g["w"]}).reset_index()
