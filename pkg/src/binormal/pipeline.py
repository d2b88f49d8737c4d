"""Stage runner: profile, evolve, reconstruct, analyze, modes, report."""
from __future__ import annotations

import dataclasses
import logging
import math
import warnings

import numpy as np

from .asymptotics import FilamentFlow, slice_times, theorem_bounds_report
from .io import (CURVE_HEADER, FRAME_HEADER, STAGES, RunConfig, RunDir, RunManifest, load_trajectory,
                 runs_root, save_trajectory)
from .modes import mode_growth_fit
from .nls import check_smallness, evolve, j_norm_series, scattering_state
from .profile import SelfSimilarParams, exact_corner_angle, extract_frame_limits, integrate_profile
from .rates import RateFit

log = logging.getLogger(__name__)

RATE_HEADER = ["name", "exponent", "constant", "residual", "window_lo", "window_hi", "n_samples", "status"]


class StageFailed(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclasses.dataclass
class PipelineResult:
    manifest: RunManifest
    run_dir: RunDir
    checks: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def output_times(cfg: RunConfig) -> tuple:
    """Snapshot times: 1 / t' on the slice grid down to t_min, plus any requested ones."""
    evo = cfg.evolution
    if 1.0 / cfg.t_min > evo.t_end * (1 + 1e-12):
        raise ValueError(f"t_min = {cfg.t_min:g} needs t_end >= {1 / cfg.t_min:g}")
    grid = [float(t) for t in 1.0 / slice_times(cfg.t_min)]
    extra = [t for t in evo.output_times if min(abs(t / g - 1) for g in grid) > 1e-9]
    return tuple(sorted(grid + extra))


class Pipeline:
    def __init__(self, cfg: RunConfig, run_dir=None):
        self.cfg = cfg
        self.rd = RunDir(run_dir if run_dir is not None else runs_root() / cfg.resolved_run_id())
        self._cache = {}
        self.checks = {}

    def _manifest(self) -> RunManifest:
        if self.rd.exists(RunDir.MANIFEST):
            m = self.rd.load_manifest()
            if m.config_hash != self.cfg.hash():
                raise ValueError(f"run directory {self.rd.root} holds a run with a different config")
            return m
        return RunManifest.for_config(self.cfg, self.rd.run_id)

    def run(self, stages=None) -> PipelineResult:
        stages = self.cfg.stages if stages is None else tuple(s for s in STAGES if s in stages)
        if {"reconstruct", "analyze"} & set(stages) and not self.rd.exists("evolve/trajectory.json"):
            stages = tuple(s for s in STAGES if s in stages or s == "evolve")
        evo = self.cfg.evolution
        check_smallness(evo.perturbation.sample(evo.grid), evo.grid, evo.a, evo.gamma, evo.smallness)
        m = self._manifest()
        m.status, m.failed_stage, m.error = "incomplete", None, None
        self.rd.write_text("config.json", self.cfg.dumps() + "\n")
        self.rd.record(m, ["config.json"])
        for stage in stages:
            log.info("stage %s", stage)
            try:
                names = getattr(self, f"stage_{stage}")()
            except Exception as exc:
                m.failed_stage, m.error = stage, f"{type(exc).__name__}: {exc}"
                self.rd.save_manifest(m)
                raise StageFailed(stage, exc) from exc
            if stage not in m.stages_done:
                m.stages_done.append(stage)
            self.rd.record(m, names)
        m.status = "complete"
        self.rd.save_manifest(m)
        return PipelineResult(m, self.rd, dict(self.checks))

    # cached inputs

    def profile(self):
        if "profile" not in self._cache:
            self._cache["profile"] = integrate_profile(SelfSimilarParams(self.cfg.a), self.cfg.profile_s_max)
        return self._cache["profile"]

    def trajectory(self):
        if "trajectory" not in self._cache:
            if self.rd.exists("evolve/trajectory.json"):
                self._cache["trajectory"] = load_trajectory(self.rd)
            else:
                self.stage_evolve()
        return self._cache["trajectory"]

    def flow(self) -> FilamentFlow:
        if "flow" not in self._cache:
            self._cache["flow"] = FilamentFlow.from_trajectory(self.trajectory())
        return self._cache["flow"]

    # stages

    def stage_profile(self):
        sol = self.profile()
        lim = extract_frame_limits(sol)
        a = self.cfg.a
        resid = abs(math.sin(lim.theta / 2) - math.exp(-math.pi * a * a / 2))
        ok = resid < self.cfg.tolerances.profile_angle
        self.checks["profile_angle"] = ok
        self.rd.write_json("profile.json", {
            "run_id": self.rd.run_id, "a": a, "s_max": sol.s_max, "step": sol.step,
            "limits": lim.to_dict(), "theta_exact": exact_corner_angle(a), "angle_residual": resid,
            "max_orthonormality_defect": sol.max_orthonormality_defect, "passed": ok})
        stride = max(1, len(sol.s) // 4000)
        rows = np.column_stack([sol.s, sol.G, sol.T, sol.n, sol.b])[::stride]
        self.rd.write_csv("profile.csv", ["s", "Gx", "Gy", "Gz", "Tx", "Ty", "Tz", "nx", "ny", "nz",
                                          "bx", "by", "bz"], rows)
        return ["profile.json", "profile.csv"]

    def stage_evolve(self):
        evo = dataclasses.replace(self.cfg.evolution, output_times=output_times(self.cfg), record_origin=True)
        traj = evolve(evo)
        self._cache["trajectory"] = traj
        self._cache.pop("flow", None)
        return save_trajectory(self.rd, traj)

    def _curve_times(self):
        ct = self.cfg.analysis.curve_times
        return list(slice_times(self.cfg.t_min, 1)) if ct is None else list(ct)

    def stage_reconstruct(self):
        flow = self.flow()
        an = self.cfg.analysis
        curves, frames = [], []
        for tp in self._curve_times():
            xm = min(an.curve_x_max, flow.x_limit(tp))
            xs = np.linspace(-xm, xm, an.curve_points)
            c = flow.curve(tp, xm, extra=xs)
            idx = np.searchsorted(c.x, xs).clip(0, len(c.x) - 1)
            fr = c.frames
            t = np.full(xs.size, tp)
            curves.append(np.column_stack([t, c.x[idx], c.chi[idx], fr.T[idx], fr.e1[idx], fr.e2[idx]]))
            frames.append(np.column_stack([t, c.x[idx], fr.T[idx], fr.e1[idx], fr.e2[idx],
                                           fr.psi[idx].real, fr.psi[idx].imag]))
        self.rd.write_csv("curves.csv", CURVE_HEADER, np.concatenate(curves))
        self.rd.write_csv("frames.csv", FRAME_HEADER, np.concatenate(frames))
        return ["curves.csv", "frames.csv"]

    def stage_analyze(self):
        an, tol = self.cfg.analysis, self.cfg.tolerances
        rep = theorem_bounds_report(self.flow(), self.profile(), self.cfg.t_min, an.x_lo, an.x_hi, an.n_x,
                                    an.corner_lo, tol.corner_bound, tol.envelope_change)
        rep = {"run_id": self.rd.run_id, **rep}
        self.checks["theorem"] = bool(rep["passed"])
        self.rd.write_json("theorem_report.json", rep)
        records = self._rates()
        self.rd.write_json("rates.json", records)
        self.rd.write_csv("rates.csv", RATE_HEADER, (
            [r["name"], r.get("exponent", ""), r.get("constant", ""), r.get("residual", ""),
             *(r.get("window") or ["", ""]), r.get("n_samples", 0), r["status"]] for r in records))
        return ["theorem_report.json", "rates.json", "rates.csv"]

    def _rates(self) -> list:
        traj = self.trajectory()
        a, t_end = self.cfg.a, traj.config.t_end

        def rec(name, fit: RateFit | None, why="too few positive samples in the window"):
            if fit is None:
                return {"name": name, "status": f"refused: {why}"}
            return {"name": name, **fit.to_dict(), "status": "ok"}

        # probes on the geometric slice grid keep the Cauchy gaps comparable
        grid = np.sort(1.0 / slice_times(self.cfg.t_min))
        out = [rec("j_norm", j_norm_series(traj.states, a, window=(t_end / 10 ** 1.2, t_end)).fit)]
        probes = grid[grid >= 10]
        if probes.size >= 3:
            with warnings.catch_warnings(record=True):
                warnings.simplefilter("always")
                sc = scattering_state(traj.states, a, probes, traj.config.gamma)
            out.append(rec("scattering_gap", sc.fit))
        else:
            out.append(rec("scattering_gap", None, "needs three slice probes at t >= 10"))
        return out

    def stage_modes(self):
        mc = self.cfg.modes
        if self.cfg.a == 0:
            rep = {"run_id": self.rd.run_id, "skipped": "no background for a = 0", "passed": True,
                   "regimes": []}
        else:
            g = mode_growth_fit(self.cfg.a, mc.delta, mc.xi, t1=mc.t1)
            rep = {"run_id": self.rd.run_id, **g.to_dict()}
        self.checks["modes"] = bool(rep["passed"])
        self.rd.write_json("modes.json", rep)
        self.rd.write_csv("modes.csv", ["regime", "n_modes", "sup_ratio", "sup_ratio_doubled",
                                        "relative_change", "stable", "exponent"],
                          ([r[k] if r[k] is not None else "" for k in
                            ("regime", "n_modes", "sup_ratio", "sup_ratio_doubled", "relative_change",
                             "stable", "exponent")] for r in rep["regimes"]))
        return ["modes.json", "modes.csv"]

    def stage_report(self):
        parts = {"profile": "profile.json", "theorem": "theorem_report.json", "modes": "modes.json",
                 "rates": "rates.json"}
        checks, refs = {}, {}
        for key, name in parts.items():
            if not self.rd.exists(name):
                continue
            d = self.rd.read_json(name)
            if isinstance(d, dict) and d.get("run_id") not in (None, self.rd.run_id):
                raise ValueError(f"{name} belongs to run {d['run_id']}")
            refs[key] = name
            if isinstance(d, dict) and "passed" in d:
                checks[key] = bool(d["passed"])
        data = [n for n in ("curves.csv", "frames.csv", "profile.csv", "rates.csv", "modes.csv")
                if self.rd.exists(n)]
        self.checks.update({f"report:{k}": v for k, v in checks.items()})
        self.rd.write_json("report.json", {"run_id": self.rd.run_id, "config_hash": self.cfg.hash(),
                                           "parts": refs, "datasets": data, "checks": checks,
                                           "passed": all(checks.values())})
        return ["report.json"]


def run_pipeline(cfg: RunConfig, run_dir=None, stages=None) -> PipelineResult:
    return Pipeline(cfg, run_dir).run(stages)
