"""Run manifests: INI files with ``[run] [params] [data] [solver] [stop] [analysis]``.

Any key can be overridden from the command line as ``section.key=value``.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..core import NLSParams, RadialField, RadialGrid, derive_params
from ..solver import SolverConfig, StopCriteria

DATA_FAMILIES = ("gaussian", "compact")


@dataclass
class DataSpec:
    family: str = "gaussian"
    amplitude: float = 5.0
    width: float = 1.0
    chirp: float = 0.0
    require_negative_energy: bool = True

    def build(self, grid: RadialGrid, P: NLSParams) -> RadialField:
        """``a f(r/w) exp(i chirp r^2)`` with ``f`` a Gaussian or ``(1 - x^2)^4`` on ``x < 1``."""
        r = grid.radii
        x = r / self.width
        if self.family == "gaussian":
            f = np.exp(-x * x)
        elif self.family == "compact":
            f = np.where(x < 1.0, np.clip(1.0 - x * x, 0.0, None) ** 4, 0.0)
        else:
            raise ValueError(f"unknown data family {self.family!r}; choose from {DATA_FAMILIES}")
        v = self.amplitude * f * np.exp(1j * self.chirp * r * r)
        v[-1] = 0.0
        return RadialField(grid, v, P)


@dataclass
class AnalysisSpec:
    constants: str = ""  # empty: the packaged constants file
    anchors: str = "all"  # "all", "last", or a list of anchor orders k
    A_ladder: Sequence[float] = (1.0, 2.0, 4.0, 8.0)
    thresholds: Sequence[float] = (0.01, 0.1, 0.5)
    channel_rule: str = "first"


@dataclass
class RunManifest:
    scenario: str = "blowup"
    name: str = "run"
    N: int = 3
    p: float = 3.0
    data: DataSpec = field(default_factory=DataSpec)
    solver: SolverConfig = field(default_factory=SolverConfig)
    analysis: AnalysisSpec = field(default_factory=AnalysisSpec)
    seed: int = 0
    output: str = "runs/run"
    source: str = ""

    @property
    def params(self) -> NLSParams:
        return derive_params(self.N, self.p)

    def initial_data(self) -> RadialField:
        return self.data.build(self.solver.make_grid(), self.params)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp["run"] = {"scenario": self.scenario, "name": self.name, "seed": str(self.seed), "output": self.output}
        cp["params"] = {"N": str(self.N), "p": repr(self.p)}
        cp["data"] = _flatten(self.data)
        cp["solver"] = {k: v for k, v in _flatten(self.solver).items() if k != "stop"}
        cp["stop"] = _flatten(self.solver.stop)
        cp["analysis"] = _flatten(self.analysis)
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()[:16]


def _fmt(v) -> str:
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def _flatten(obj) -> dict:
    return {f.name: _fmt(getattr(obj, f.name)) for f in dataclasses.fields(obj)
            if not dataclasses.is_dataclass(getattr(obj, f.name))}


def _coerce(text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, int):
        return int(float(text)) if text not in ("inf", "infinity") else math.inf
    if isinstance(default, float):
        return float(text)
    if isinstance(default, (list, tuple)):
        return tuple(float(x) for x in text.replace(",", " ").split())
    if default is None:
        if text in ("", "none", "None"):
            return None
        try:
            return float(text)
        except ValueError:
            return text
    return text


def apply_section(obj, section: dict, where: str) -> None:
    names = {f.name for f in dataclasses.fields(obj)}
    for k, v in section.items():
        if k not in names:
            raise KeyError(f"unknown key {k!r} in [{where}]")
        setattr(obj, k, _coerce(v, getattr(obj, k)))


def parse_overrides(items: Sequence[str] | None) -> dict:
    """``["solver.M=4096", ...]`` to ``{"solver": {"M": "4096"}}``."""
    out: dict = {}
    for it in items or ():
        key, sep, val = it.partition("=")
        sec, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ValueError(f"override must look like section.key=value, got {it!r}")
        out.setdefault(sec, {})[name] = val
    return out


def load_manifest(path_or_text, overrides: Sequence[str] | None = None) -> RunManifest:
    """Read an INI manifest (path or text) and apply overrides."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    text = str(path_or_text)
    src = ""
    if "\n" not in text and Path(text).exists():
        src = text
        text = Path(text).read_text()
    cp.read_string(text)
    sections = {s: dict(cp[s]) for s in cp.sections()}
    for sec, kv in parse_overrides(overrides).items():
        sections.setdefault(sec, {}).update(kv)
    m = RunManifest(source=src)
    m.solver = SolverConfig()
    m.solver.stop = StopCriteria()
    known = {"run", "params", "data", "solver", "stop", "analysis"}
    for sec in sections:
        if sec not in known:
            raise KeyError(f"unknown manifest section [{sec}]")
    run = sections.get("run", {})
    for k, v in run.items():
        if k not in ("scenario", "name", "seed", "output"):
            raise KeyError(f"unknown key {k!r} in [run]")
        setattr(m, k, _coerce(v, getattr(m, k)))
    par = sections.get("params", {})
    m.N = int(par.get("N", m.N))
    m.p = float(par.get("p", m.p))
    apply_section(m.data, sections.get("data", {}), "data")
    apply_section(m.solver.stop, sections.get("stop", {}), "stop")
    apply_section(m.solver, sections.get("solver", {}), "solver")
    apply_section(m.analysis, sections.get("analysis", {}), "analysis")
    m.solver.__post_init__()
    derive_params(m.N, m.p)
    return m


def packaged(name: str) -> Path:
    return Path(__file__).with_name(name)
