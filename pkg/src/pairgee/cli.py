"""Command line entry point: ``pairgee <command> ...``."""
from __future__ import annotations

import argparse
import contextlib
import logging
import shutil
import sys
import tempfile
import warnings
from dataclasses import replace
from pathlib import Path

import pandas as pd

from . import __version__
from .config import PipelineConfig
from .events import WindowGrid, derive_alternating_events
from .files import (FIT_COLUMNS, PO_COLUMNS, WEIGHT_COLUMNS, InputError, events_frame,
                    read_csv, read_subjects, write_csv)
from .forest import ForestConfig
from .gee import GEEError, ModelSpec, term_columns
from .history import HistoryConfig
from .pipeline import KEYS, build_panel, fit_panel, forest_seed, weight_rows
from .simulate import (METHODS, CorrelatedScenario, IndependentScenario, careqol_like_data,
                       run_replicates, scenario_setup, window_bias_profile)

log = logging.getLogger("pairgee")

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2


class StageError(RuntimeError):
    pass


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except (InputError, GEEError):
        raise
    except Exception as exc:
        raise StageError(f"stage '{name}' failed: {type(exc).__name__}: {exc}") from exc


@contextlib.contextmanager
def staged_output(out: Path):
    """Write into a scratch directory and move files into ``out`` only on success."""
    out.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".partial-", dir=out))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    for f in sorted(tmp.iterdir()):
        f.replace(out / f.name)
    tmp.rmdir()


# ------------------------------------------------------------------ analysis

def _load(cfg: PipelineConfig):
    with stage("load"):
        if not cfg.events or not cfg.subjects:
            raise InputError("config must name [data] events and subjects files")
        subjects = read_subjects(cfg.events, cfg.subjects, cfg.time_varying or None)
        if not subjects:
            raise InputError("no subjects in input")
    return subjects


def _transform(cfg, subjects):
    with stage("transform"):
        panel = build_panel(subjects, cfg.grid)
    missing = sorted((term_columns(cfg.model) | set(cfg.features)) - set(panel.frame.columns) - {"t"})
    if missing:
        raise InputError(f"missing covariate column(s): {', '.join(missing)}")
    covs = [c for c in panel.covariates if c in term_columns(cfg.model) | set(cfg.features)]
    bad = panel.frame[covs].isna().any(axis=1)
    if bad.any():
        row = panel.frame.loc[bad].iloc[0]
        col = [c for c in covs if pd.isna(row[c])][0]
        raise InputError(f"covariate {col!r} has no value for subject {row['subject_id']} at t={row['t']}")
    return panel


def _weights(cfg, subjects, panel):
    feats = list(cfg.features) or list(panel.covariates)
    fcfg = replace(cfg.forest, seed=forest_seed(cfg.seed, 1))
    with stage("weights"):
        return weight_rows(panel, subjects, cfg.history.regime, feats, fcfg, cfg.history.lookback)


def _po_frame(panel):
    f = panel.frame
    return f.loc[f["po"].notna(), PO_COLUMNS].astype({"n_r": int})


def fit_report(cfg, fit, weights_mode: str) -> str:
    lines = [
        "weighted pseudo-observation GEE fit",
        f"weights: {weights_mode}",
        f"history regime: {cfg.history.regime if weights_mode == 'forest' else '-'}",
        f"window starts: {', '.join(f'{t:g}' for t in cfg.grid.starts)}; tau = {cfg.grid.tau:g}",
        f"subjects: {fit.n_subjects}; rows used: {fit.n_rows}",
        f"working structure: {fit.working}; converged: {str(fit.converged).lower()}"
        + ("; correlation projected to nearest PSD" if fit.projected else ""),
        f"seed: {cfg.seed}",
        "",
    ]
    tab = fit.table()
    lines.append(tab.to_string(index=False, float_format=lambda v: f"{v:.6f}"))
    return "\n".join(lines) + "\n"


def cmd_transform(args) -> int:
    cfg = PipelineConfig.load(args.config)
    subjects = _load(cfg)
    panel = _transform(cfg, subjects)
    with staged_output(Path(cfg.out)) as tmp:
        write_csv(panel.frame.drop(columns=["po", "n_r"]), tmp / "windows.csv")
        write_csv(_po_frame(panel), tmp / "pseudo.csv", PO_COLUMNS)
    return EXIT_OK


def cmd_weights(args) -> int:
    cfg = PipelineConfig.load(args.config)
    subjects = _load(cfg)
    panel = _transform(cfg, subjects)
    w = _weights(cfg, subjects, panel)
    with staged_output(Path(cfg.out)) as tmp:
        write_csv(w, tmp / "weights.csv", WEIGHT_COLUMNS)
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = PipelineConfig.load(args.config)
    subjects = _load(cfg)
    panel = _transform(cfg, subjects)
    with staged_output(Path(cfg.out)) as tmp:
        write_csv(panel.frame.drop(columns=["po", "n_r"]), tmp / "windows.csv")
        write_csv(_po_frame(panel), tmp / "pseudo.csv", PO_COLUMNS)
        pi = None
        if args.weights == "forest":
            w = _weights(cfg, subjects, panel)
            write_csv(w, tmp / "weights.csv", WEIGHT_COLUMNS)
            pi = panel.frame[KEYS].merge(w, on=KEYS, how="left")["pi_hat"].to_numpy()
        with stage("fit"):
            fit = fit_panel(panel, cfg.model, pi)
        write_csv(fit.table(), tmp / "fit.csv", FIT_COLUMNS)
        (tmp / "fit_report.txt").write_text(fit_report(cfg, fit, args.weights))
    sys.stdout.write(fit_report(cfg, fit, args.weights))
    return EXIT_OK


def cmd_derive(args) -> int:
    meas = read_csv(args.measurements, ["subject_id", "time", "value"], "measurements")
    censor = {}
    subj = None
    if args.subjects:
        subj = read_csv(args.subjects, ["subject_id"], "subjects")
        if "censor_time" in subj.columns:
            censor = {str(k): float(v) for k, v in zip(subj["subject_id"], subj["censor_time"]) if not pd.isna(v)}
    with stage("derive-events"):
        subjects = derive_alternating_events(
            zip(meas["subject_id"].astype(str), meas["time"], meas["value"]), args.threshold, censor)
    cens = pd.DataFrame({"subject_id": [s.subject_id for s in subjects],
                         "censor_time": [s.censor_time for s in subjects]})
    if subj is not None:
        cens = cens.merge(subj.drop(columns=[c for c in ("censor_time",) if c in subj.columns]),
                          on="subject_id", how="left")
    with staged_output(Path(args.out)) as tmp:
        write_csv(events_frame(subjects), tmp / "events.csv")
        write_csv(cens, tmp / "subjects.csv")
    return EXIT_OK


def cmd_simulate(args) -> int:
    methods = [m.strip() for m in args.regimes.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise InputError(f"unknown regime(s): {', '.join(bad)}")
    if args.replicates < 2:
        raise InputError("--replicates must be at least 2")
    sc = CorrelatedScenario(n=args.n, censor=not args.uncensored) if args.scenario == "correlated" \
        else IndependentScenario(n=args.n, censor=not args.uncensored)
    fcfg = replace(scenario_setup(sc).forest, n_trees=args.trees)
    with stage("simulate"):
        res = run_replicates(sc, methods, args.replicates, args.seed, fcfg, n_jobs=args.jobs,
                             working=args.working)
    if res.failures:
        log.warning("%d replicate(s) failed and were excluded", len(res.failures))
    with staged_output(Path(args.out)) as tmp:
        write_csv(res.metrics, tmp / "metrics.csv")
        write_csv(window_bias_profile(res.windows), tmp / "window_bias.csv")
        write_csv(res.estimates, tmp / "estimates.csv")
    sys.stdout.write(render_metrics(res.metrics))
    return EXIT_OK


def render_metrics(m: pd.DataFrame) -> str:
    cols = ["method", "term", "bias", "rel_abs_bias", "coverage", "mean_se", "esd", "se_esd"]
    return m[cols].to_string(index=False, float_format=lambda v: f"{v:.3f}") + "\n"


def cmd_report(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        path = path / "metrics.csv" if (path / "metrics.csv").exists() else path / "fit.csv"
    df = read_csv(path, [], "results")
    if "method" in df.columns:
        sys.stdout.write(render_metrics(df))
    else:
        sys.stdout.write(df.to_string(index=False, float_format=lambda v: f"{v:.4f}") + "\n")
    return EXIT_OK


def cmd_synth(args) -> int:
    meas, subj, tv = careqol_like_data(n=args.n, seed=args.seed)
    with staged_output(Path(args.out)) as tmp:
        write_csv(meas, tmp / "measurements.csv")
        write_csv(subj, tmp / "subjects_raw.csv")
        write_csv(tv, tmp / "time_varying.csv")
        cfg = PipelineConfig(
            events="events.csv", subjects="subjects.csv", time_varying="time_varying.csv",
            grid=WindowGrid(tuple(float(t) for t in range(0, 11, 2)), 2.0),
            history=HistoryConfig("reflective", -12.0),
            forest=ForestConfig(n_trees=500),
            model=ModelSpec(CAREQOL_TERMS),
            out="results", seed=args.seed)
        (tmp / "config.ini").write_text(cfg.to_ini())
    return EXIT_OK


CAREQOL_TERMS = ("nonhispanic", "age", "white", "male", "tbi_partial", "tbi_independent",
                 "sleep", "steps", "push")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pairgee", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("derive-events", help="turn repeated scores into alternating events")
    p.add_argument("--measurements", required=True)
    p.add_argument("--subjects", help="optional subjects CSV (censor times, covariates)")
    p.add_argument("--threshold", type=float, default=2.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_derive)

    for name, func, hlp in (("transform", cmd_transform, "windowed data and pseudo-observations"),
                            ("weights", cmd_weights, "forest at-risk probabilities")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--config", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("fit", help="run the full pipeline and fit the model")
    p.add_argument("--config", required=True)
    p.add_argument("--weights", choices=["forest", "none"], default="forest")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="Monte Carlo study")
    p.add_argument("--scenario", choices=["correlated", "independent"], required=True)
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--n", type=int, default=750)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--regimes", default="full,p1,p2,p3,p4,reflective,none,unweighted")
    p.add_argument("--trees", type=int, default=500)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--working", choices=["independence", "unstructured"], default="independence")
    p.add_argument("--uncensored", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="print metrics.csv or fit.csv as a table")
    p.add_argument("path")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth-careqol", help="write a synthetic caregiver cohort and config")
    p.add_argument("--n", type=int, default=257)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", RuntimeWarning)
    try:
        return args.func(args)
    except (InputError, GEEError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (StageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
