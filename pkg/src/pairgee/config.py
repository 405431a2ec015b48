"""INI configuration for the analysis pipeline."""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field
from pathlib import Path

from .events import WindowGrid
from .forest import ForestConfig
from .gee import ModelSpec
from .history import HistoryConfig
from .files import InputError


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(" ", "").split(",") if x)


def _fmt_floats(xs) -> str:
    return ", ".join(repr(float(x)) for x in xs)


def _opt_int(text: str):
    text = text.strip()
    return None if text in ("", "none", "None") else int(text)


@dataclass
class PipelineConfig:
    events: str = ""
    subjects: str = ""
    time_varying: str = ""
    grid: WindowGrid = field(default_factory=lambda: WindowGrid((0.0,), 1.0))
    history: HistoryConfig = field(default_factory=HistoryConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    model: ModelSpec = field(default_factory=lambda: ModelSpec((), intercept=True))
    features: tuple[str, ...] = ()
    out: str = "out"
    seed: int = 0

    @classmethod
    def from_ini(cls, text: str, base: Path | None = None) -> "PipelineConfig":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise InputError(f"cannot parse config: {exc}") from None
        try:
            return cls._from_parser(cp, base)
        except (KeyError, ValueError, configparser.Error) as exc:
            raise InputError(f"invalid config: {exc}") from None

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise InputError(f"config file not found: {path}")
        return cls.from_ini(path.read_text(), base=path.parent)

    @classmethod
    def _from_parser(cls, cp, base):
        def p(key):
            v = cp.get("data", key, fallback="").strip()
            if v and base is not None and not Path(v).is_absolute():
                v = str(base / v)
            return v

        seed = cp.getint("run", "seed", fallback=0)
        grid = WindowGrid(_floats(cp.get("grid", "starts")), cp.getfloat("grid", "tau"))
        hist = HistoryConfig(regime=cp.get("history", "regime", fallback="full"),
                             lookback=cp.getfloat("history", "lookback", fallback=-12.0),
                             p1_pairs=cp.getint("history", "p1_pairs", fallback=2),
                             p2_pairs=cp.getint("history", "p2_pairs", fallback=1))
        fs = cp["forest"] if cp.has_section("forest") else {}
        forest = ForestConfig(n_trees=int(fs.get("n_trees", 500)),
                              mtry=_opt_int(fs.get("mtry", "")),
                              min_node_size=int(fs.get("min_node_size", 10)),
                              max_depth=_opt_int(fs.get("max_depth", "")),
                              clip=float(fs.get("clip", 0.01)),
                              seed=seed,
                              n_jobs=int(fs.get("n_jobs", 1)))
        terms = tuple(t.strip() for t in cp.get("model", "terms").split(",") if t.strip())
        model = ModelSpec(terms,
                          intercept=cp.getboolean("model", "intercept", fallback=True),
                          working=cp.get("model", "working", fallback="independence"),
                          tol=cp.getfloat("model", "tol", fallback=1e-8),
                          max_iter=cp.getint("model", "max_iter", fallback=100))
        feats = tuple(f.strip() for f in cp.get("forest", "features", fallback="").split(",") if f.strip())
        out = cp.get("run", "out", fallback="out")
        if base is not None and not Path(out).is_absolute():
            out = str(base / out)
        return cls(p("events"), p("subjects"), p("time_varying"), grid, hist, forest, model,
                   feats, out, seed)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp["data"] = {"events": self.events, "subjects": self.subjects, "time_varying": self.time_varying}
        cp["grid"] = {"starts": _fmt_floats(self.grid.starts), "tau": repr(float(self.grid.tau))}
        cp["history"] = {"regime": self.history.regime, "lookback": repr(float(self.history.lookback)),
                         "p1_pairs": str(self.history.p1_pairs), "p2_pairs": str(self.history.p2_pairs)}
        f = self.forest
        cp["forest"] = {"n_trees": str(f.n_trees), "mtry": "" if f.mtry is None else str(f.mtry),
                        "min_node_size": str(f.min_node_size),
                        "max_depth": "" if f.max_depth is None else str(f.max_depth),
                        "clip": repr(float(f.clip)), "n_jobs": str(f.n_jobs),
                        "features": ", ".join(self.features)}
        m = self.model
        cp["model"] = {"terms": ", ".join(m.terms), "intercept": str(m.intercept).lower(),
                       "working": m.working, "tol": repr(float(m.tol)), "max_iter": str(m.max_iter)}
        cp["run"] = {"seed": str(self.seed), "out": self.out}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()
