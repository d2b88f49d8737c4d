"""Run configuration, run directories, manifests and dataset export."""
from __future__ import annotations

import csv
import hashlib
import json
import os
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .grid import ComplexField, GridSpec
from .nls import EvolutionConfig, FieldState, OriginTrace, PerturbationSpec, Trajectory

RUNS_ENV = "BINORMAL_RUNS_ROOT"
STAGES = ("profile", "evolve", "reconstruct", "analyze", "modes", "report")
DATASETS = {"curves": "curves", "frames": "frames", "rates": "rates", "modes": "modes"}
CURVE_HEADER = ["t", "x", "chi_x", "chi_y", "chi_z", "Tx", "Ty", "Tz",
                "e1x", "e1y", "e1z", "e2x", "e2y", "e2z"]
FRAME_HEADER = ["t", "x", "Tx", "Ty", "Tz", "e1x", "e1y", "e1z", "e2x", "e2y", "e2z",
                "psi_re", "psi_im"]


class RunNotFound(LookupError):
    def __init__(self, run_id, available):
        self.available = sorted(available)
        listing = ", ".join(self.available) or "none"
        super().__init__(f"no run {run_id!r}; available runs: {listing}")


def runs_root() -> Path:
    return Path(os.environ.get(RUNS_ENV, "runs")).resolve()


def canonical_json(obj) -> str:
    # repr round-trips floats, so json's default float formatting is exact
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class AnalysisConfig:
    t_min: float | None = None
    x_lo: float = 0.5
    x_hi: float = 10.0
    n_x: int = 16
    corner_lo: float = 0.1
    curve_times: list | None = None
    curve_x_max: float = 10.0
    curve_points: int = 201


@dataclass
class ModesConfig:
    delta: float = 0.1
    t1: float = 100.0
    xi: list | None = None


@dataclass
class Tolerances:
    envelope_change: float = 0.2
    corner_bound: float = 0.2
    profile_angle: float = 1e-3


@dataclass
class RunConfig:
    evolution: EvolutionConfig
    profile_s_max: float | None = None
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    modes: ModesConfig = field(default_factory=ModesConfig)
    tolerances: Tolerances = field(default_factory=Tolerances)
    stages: tuple = STAGES
    run_id: str | None = None

    def __post_init__(self):
        bad = [s for s in self.stages if s not in STAGES]
        if bad:
            raise ValueError(f"unknown stages {bad}; choose from {list(STAGES)}")
        self.stages = tuple(s for s in STAGES if s in self.stages)

    @property
    def a(self) -> float:
        return self.evolution.a

    @property
    def t_min(self) -> float:
        t = self.analysis.t_min
        return 1.0 / self.evolution.t_end if t is None else t

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "evolution": self.evolution.to_dict(),
            "profile_s_max": self.profile_s_max,
            "analysis": dict(self.analysis.__dict__),
            "modes": dict(self.modes.__dict__),
            "tolerances": dict(self.tolerances.__dict__),
            "stages": list(self.stages),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {"run_id", "evolution", "profile_s_max", "analysis", "modes", "tolerances", "stages"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        if "evolution" not in d:
            raise ValueError("config needs an 'evolution' block")
        return cls(EvolutionConfig.from_dict(d["evolution"]), d.get("profile_s_max"),
                   AnalysisConfig(**d.get("analysis", {})), ModesConfig(**d.get("modes", {})),
                   Tolerances(**d.get("tolerances", {})), tuple(d.get("stages", STAGES)),
                   d.get("run_id"))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.loads(Path(path).read_text())

    def hash(self) -> str:
        # the stage filter and run id do not change what a stage computes
        d = self.to_dict()
        d.pop("stages")
        d.pop("run_id")
        return hashlib.sha256(canonical_json(d).encode()).hexdigest()

    def resolved_run_id(self) -> str:
        return self.run_id or f"run-{self.hash()[:12]}"


def minimal_config() -> RunConfig:
    """Unperturbed a = 1 run to t = 10: the self-similar baseline."""
    evo = EvolutionConfig(a=1.0, grid=GridSpec(4096, 128.0), t_end=10.0, dt=1e-2, dt_power=0.5,
                          perturbation=PerturbationSpec("gaussian-bump", 0.0, width=4.0))
    return RunConfig(evo, profile_s_max=200.0)


def default_config() -> RunConfig:
    """a = 1, eps = 0.01 Gaussian bump of width 4, t_min = 5e-3."""
    evo = EvolutionConfig(a=1.0, grid=GridSpec(8192, 2048.0), t_end=200.0, dt=1e-2, dt_power=0.5,
                          perturbation=PerturbationSpec("gaussian-bump", 0.01, width=4.0))
    return RunConfig(evo, profile_s_max=200.0, analysis=AnalysisConfig(t_min=5e-3))


def version_info() -> dict:
    return {"binormal": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


@dataclass
class RunManifest:
    run_id: str
    timestamp: str
    config_hash: str
    a: float
    grid: dict
    time_range: list
    perturbation: dict
    tolerances: dict
    versions: dict
    files: dict = field(default_factory=dict)
    status: str = "incomplete"
    stages_done: list = field(default_factory=list)
    failed_stage: str | None = None
    error: str | None = None

    @classmethod
    def for_config(cls, cfg: RunConfig, run_id: str | None = None) -> "RunManifest":
        evo = cfg.evolution
        pert = evo.perturbation.to_dict()
        if isinstance(pert.get("samples"), dict):
            pert["samples"] = "custom"
        return cls(run_id or cfg.resolved_run_id(), datetime.now(timezone.utc).isoformat(), cfg.hash(), evo.a,
                   evo.grid.to_dict(), [evo.t_start, evo.t_end], pert, dict(cfg.tolerances.__dict__),
                   version_info())

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(**d)


class RunDir:
    """A run directory; every write goes through ``path`` and stays inside it."""

    MANIFEST = "manifest.json"

    def __init__(self, root):
        self.root = Path(root).resolve()

    @property
    def run_id(self) -> str:
        return self.root.name

    def path(self, name: str) -> Path:
        p = (self.root / name).resolve()
        if p != self.root and self.root not in p.parents:
            raise ValueError(f"{name!r} points outside the run directory")
        return p

    def exists(self, name: str) -> bool:
        return self.path(name).exists()

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
        return p

    def write_json(self, name: str, obj) -> Path:
        return self.write_text(name, json.dumps(obj, indent=1, sort_keys=True) + "\n")

    def read_json(self, name: str):
        return json.loads(self.path(name).read_text())

    def write_csv(self, name: str, header, rows) -> Path:
        p = self.path(name)
        p.parent.mkdir(parents=True, exist_ok=True)
        with open(p, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_cell(v) for v in r])
        return p

    def read_csv(self, name: str) -> list[dict]:
        with open(self.path(name), newline="") as f:
            return list(csv.DictReader(f))

    def write_array(self, name: str, arr) -> Path:
        p = self.path(name)
        p.parent.mkdir(parents=True, exist_ok=True)
        # plain .npy carries no timestamps, unlike .npz
        np.save(p, np.asarray(arr), allow_pickle=False)
        return p

    def read_array(self, name: str) -> np.ndarray:
        return np.load(self.path(name), allow_pickle=False)

    # manifest

    def load_manifest(self) -> RunManifest:
        if not self.exists(self.MANIFEST):
            raise RunNotFound(self.run_id, list_runs(self.root.parent))
        return RunManifest.from_dict(self.read_json(self.MANIFEST))

    def save_manifest(self, m: RunManifest) -> None:
        self.write_json(self.MANIFEST, m.to_dict())

    def record(self, m: RunManifest, names) -> None:
        for n in names:
            m.files[n] = sha256_file(self.path(n))
        self.save_manifest(m)

    def verify(self, m: RunManifest | None = None) -> dict:
        """Files whose checksum no longer matches the manifest (missing files map to None)."""
        m = self.load_manifest() if m is None else m
        bad = {}
        for name, digest in sorted(m.files.items()):
            p = self.path(name)
            got = sha256_file(p) if p.exists() else None
            if got != digest:
                bad[name] = got
        return bad


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def list_runs(root=None) -> list[str]:
    root = runs_root() if root is None else Path(root)
    if not root.is_dir():
        return []
    return sorted(p.name for p in root.iterdir() if (p / RunDir.MANIFEST).is_file())


def open_run(run_id: str | None = None, run_dir=None) -> RunDir:
    if run_dir is not None:
        rd = RunDir(run_dir)
    elif run_id is not None:
        rd = RunDir(runs_root() / run_id)
    else:
        raise ValueError("need a run id or a run directory")
    if not rd.exists(RunDir.MANIFEST):
        raise RunNotFound(run_id or rd.run_id, list_runs(rd.root.parent))
    return rd


def manifest(run_id: str | None = None, run_dir=None) -> RunManifest:
    return open_run(run_id, run_dir).load_manifest()


# trajectories on disk

def save_trajectory(rd: RunDir, traj: Trajectory) -> list[str]:
    rd.write_array("evolve/states.npy", np.stack([s.v.values for s in traj.states]))
    names = ["evolve/states.npy", "evolve/trajectory.json"]
    meta = {"config": traj.config.to_dict(), "times": [s.t for s in traj.states], "n_steps": traj.n_steps}
    if traj.origin is not None:
        o = traj.origin
        rd.write_array("evolve/origin.npy", np.stack([o.t.astype(complex), o.v, o.vx]))
        names.append("evolve/origin.npy")
    rd.write_json("evolve/trajectory.json", meta)
    return names


def load_trajectory(rd: RunDir) -> Trajectory:
    meta = rd.read_json("evolve/trajectory.json")
    cfg = EvolutionConfig.from_dict(meta["config"])
    vs = rd.read_array("evolve/states.npy")
    states = [FieldState(t, ComplexField(cfg.grid, v)) for t, v in zip(meta["times"], vs)]
    origin = None
    if rd.exists("evolve/origin.npy"):
        o = rd.read_array("evolve/origin.npy")
        origin = OriginTrace(o[0].real.copy(), o[1], o[2])
    return Trajectory(cfg, states, origin, meta["n_steps"])


# export

def export_dataset(run_id: str | None, what: str, fmt: str = "csv", run_dir=None) -> Path:
    """Write ``exports/<what>.<fmt>`` from the stored run data and return its path."""
    if what not in DATASETS:
        raise ValueError(f"unknown dataset {what!r}; choose from {sorted(DATASETS)}")
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    rd = open_run(run_id, run_dir)
    src = f"{DATASETS[what]}.csv"
    if not rd.exists(src):
        raise FileNotFoundError(f"run {rd.run_id} has no {what} data; run the stage that produces it")
    name = f"exports/{what}.{fmt}"
    if what == "rates" and fmt == "json":
        rd.write_text(name, rd.path("rates.json").read_text())
    elif fmt == "csv":
        rd.write_text(name, rd.path(src).read_text())
    else:
        rd.write_json(name, [_typed(r) for r in rd.read_csv(src)])
    m = rd.load_manifest()
    rd.record(m, [name])
    return rd.path(name)


def _typed(row: dict) -> dict:
    out = {}
    for k, v in row.items():
        try:
            out[k] = float(v)
        except ValueError:
            out[k] = v
    return out
