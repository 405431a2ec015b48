"""Weighted pseudo-observation regression for alternating recurrent events."""

from .events import (EventPair, LongitudinalDataset, SubjectHistory, WindowGrid,
                     WindowObservation, assemble_dataset, build_windows,
                     derive_alternating_events, eta, validate_subject)
from .history import HistoryConfig, HistoryVector, history_at, history_frame, reflective_history_at
from .pseudo import km_fit, pseudo_observations, pseudo_panel, rmst

__version__ = "0.1.0"
