"""Experiment commands: each writes deterministic artifacts under the output directory."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..blending import STRATEGIES, BlendConfig, blend_render, blend_sweep
from ..geometry import Sim3Transform, format_matrix
from ..registration import (
    RegistrationFailure,
    RegistrationResult,
    RenderSettings,
    SamplerSettings,
    SfmSimulatorConfig,
    SimulatedSfm,
    register_fields,
    sample_hemisphere_poses,
)
from ..renderer import render
from .config import SceneConfig
from .io import write_csv, write_pgm16, write_ppm
from .metrics import MetricsRow, psnr, ssim
from .scene import Scene, View, box_downsample

log = logging.getLogger(__name__)

COMMANDS = ("render", "register", "blend", "evaluate", "sweep-gamma", "sweep-rho")
IDW_STRATEGIES = tuple(s for s in STRATEGIES if s.startswith("idw"))
REPORT_VERSION = 1


def gamma_grid(lo: float, hi: float, steps: int) -> np.ndarray:
    g = np.geomspace(lo, hi, steps)
    g[0], g[-1] = lo, hi  # exact endpoints
    return g


def rho_grid(lo: float, hi: float, steps: int) -> np.ndarray:
    if steps == 1:
        return np.array([lo])
    g = np.geomspace(lo, hi, steps)
    g[0], g[-1] = lo, hi
    return g


class Experiment:
    def __init__(self, config: SceneConfig, base_dir: Path | str = ".", workers: int | None = None):
        self.config = config
        self.scene = Scene(config, base_dir)
        self.workers = workers
        self.out = config.output_dir
        self._registrations: dict[int, dict[int, RegistrationResult]] = {}

    # helpers -----------------------------------------------------------

    def _dir(self, name: str) -> Path:
        d = self.out / name
        d.mkdir(parents=True, exist_ok=True)
        return d

    def _map(self, fn: Callable, items: Sequence) -> list:
        if self.workers and self.workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]

    def blend_config(self, strategy: str | None = None, gamma: float | None = None) -> BlendConfig:
        b = self.config.blend
        return BlendConfig(
            strategy=strategy or b.strategy,
            gamma=b.gamma if gamma is None else gamma,
            tau=b.tau,
            budget=b.budget,
            eps_mass=b.eps_mass,
            seed=self.config.seed,
        )

    def _write_images(self, d: Path, stem: str, view: View, color, acc=None, depth=None, near=None, far=None):
        write_ppm(d / f"{stem}.ppm", color)
        if acc is not None:
            write_pgm16(d / f"{stem}.acc.pgm", acc, 0.0, 1.0)
        if depth is not None:
            write_pgm16(d / f"{stem}.depth.pgm", depth, near, far)

    # registration ------------------------------------------------------

    def register_field(self, i: int, n_poses: int | None = None) -> RegistrationResult:
        """Register field ``i`` against the reference field with the simulated backend."""
        cfg = self.config
        r = cfg.register
        sc = self.scene
        n = n_poses or r.n_poses
        cache = self._registrations.setdefault(n, {})
        if i in cache:
            return cache[i]
        poses = {}
        for k, (key, j) in enumerate((("A", 0), ("B", i))):
            radius = sc.world_radius(j) / sc.gauges[j].scale
            poses[key] = sample_hemisphere_poses(
                n, radius, tuple(r.elevation), sc.local_fields[j].origin, seed=cfg.seed + k
            ).poses
        sim = SfmSimulatorConfig(
            rotation_noise_deg=r.rotation_noise,
            translation_noise=r.translation_noise,
            outlier_fraction=r.outlier_fraction,
            dropout_fraction=r.dropout_fraction,
            seed=cfg.seed + 7919 * (i - 1),
            scene_radius=sc.world_radius(0),
        )
        backend = SimulatedSfm({"A": sc.gauges[0], "B": sc.gauges[i]}, sim)
        settings = RenderSettings(r.width, r.height, r.fov, r.budget, seed=cfg.seed)
        result = register_fields(
            sc.local_fields[0], sc.local_fields[i], backend, SamplerSettings(n_poses=n, seed=cfg.seed),
            settings, truth_t_ba=sc.true_transform(i), poses=poses,
        )
        cache[i] = result
        return result

    def transforms(self) -> dict[int, Sim3Transform]:
        others = range(1, len(self.scene.local_fields))
        if self.config.blend.transform == "truth":
            return {i: self.scene.true_transform(i) for i in others}
        return {i: self.register_field(i).t_ba for i in others}

    def _errors(self) -> tuple[float | None, float | None, float | None]:
        """Worst registration error over the non-reference fields (None when using the truth)."""
        if self.config.blend.transform == "truth" or len(self.scene.local_fields) < 2:
            return None, None, None
        errs = [self.register_field(i).error for i in range(1, len(self.scene.local_fields))]
        return (max(e.r_err for e in errs), max(e.t_err for e in errs), max(e.s_err for e in errs))

    # rendering ---------------------------------------------------------

    def reference_images(self) -> list[np.ndarray]:
        sc = self.scene
        if sc.truth is None:
            raise ValueError("this command needs a [truth] section in the scene config")
        b = self.config.blend

        def one(v: View):
            out = render(sc.truth, v.world, b.reference_budget, seed=self.config.seed)
            return box_downsample(out.color, v.supersample)

        return self._map(one, sc.views)

    # commands ----------------------------------------------------------

    def cmd_render(self) -> None:
        d = self._dir("render")
        sc = self.scene
        b = self.config.blend

        def one(v: View):
            k = v.supersample
            if sc.truth is not None:
                out = render(sc.truth, v.world, b.reference_budget, seed=self.config.seed)
                self._write_images(d, f"truth_{v.label}", v, box_downsample(out.color, k),
                                   box_downsample(out.accumulation, k), box_downsample(out.depth, k),
                                   v.world.near, v.world.far)
            for i, name in enumerate(sc.names):
                cam = sc.local_camera(v, i)
                out = render(sc.local_fields[i], cam, b.budget, seed=self.config.seed)
                self._write_images(d, f"{name}_{v.label}", v, box_downsample(out.color, k),
                                   box_downsample(out.accumulation, k), box_downsample(out.depth, k),
                                   cam.near, cam.far)

        self._map(one, sc.views)

    def cmd_register(self) -> None:
        d = self._dir("register")
        results = {i: self.register_field(i) for i in range(1, len(self.scene.local_fields))}
        (d / "report.txt").write_text(format_report(self.scene, results), encoding="utf-8")

    def cmd_blend(self) -> None:
        d = self._dir("blend")
        sc = self.scene
        fs = sc.field_set(self.transforms())
        cfg = self.blend_config()

        def one(v: View):
            cam = sc.reference_camera(v)
            out = blend_render(fs, cam, cfg)
            k = v.supersample
            self._write_images(d, f"{cfg.strategy}_{v.label}", v, box_downsample(out.color, k),
                               box_downsample(out.accumulation, k), box_downsample(out.depth, k),
                               cam.near, cam.far)
            dec = out.decision
            if dec is None:
                return [v.label, False, sc.names[0], sc.names[0], ""]
            return [v.label, dec.blend, sc.names[dec.nearest], " ".join(sc.names[m] for m in dec.members), dec.value]

        rows = self._map(one, sc.views)
        write_csv(d / "decisions.csv", ["view", "blend", "nearest", "members", "ratio"], rows)

    def evaluate_strategies(self, strategies: Sequence[str] = STRATEGIES, write_to: Path | None = None) -> list[MetricsRow]:
        sc = self.scene
        refs = self.reference_images()
        fs = sc.field_set(self.transforms())
        errs = self._errors()
        rows = []
        for strategy in strategies:
            cfg = self.blend_config(strategy)

            def one(item):
                v, ref = item
                out = blend_render(fs, sc.reference_camera(v), cfg)
                img = box_downsample(out.color, v.supersample)
                if write_to is not None:
                    write_ppm(write_to / f"{strategy}_{v.label}.ppm", img)
                return psnr(img, ref), ssim(img, ref)

            scores = self._map(one, list(zip(sc.views, refs)))
            rows.append(MetricsRow(self.config.name, strategy, cfg.gamma, cfg.tau,
                                   _mean(s[0] for s in scores), _mean(s[1] for s in scores), *errs))
        return rows

    def cmd_evaluate(self) -> None:
        d = self._dir("evaluate")
        rows = self.evaluate_strategies(STRATEGIES, d)
        write_csv(d / "metrics.csv", MetricsRow.COLUMNS, [r.values() for r in rows])

    def sweep_gamma(self, gammas: Sequence[float], strategies: Sequence[str] = IDW_STRATEGIES,
                    write_to: Path | None = None) -> list[MetricsRow]:
        sc = self.scene
        refs = self.reference_images()
        fs = sc.field_set(self.transforms())
        errs = self._errors()
        rows = []
        for strategy in strategies:
            cfg = self.blend_config(strategy)

            def one(item):
                v, ref = item
                outs = blend_sweep(fs, sc.reference_camera(v), cfg, gammas)
                scores = []
                for k, out in enumerate(outs):
                    img = box_downsample(out.color, v.supersample)
                    if write_to is not None:
                        write_ppm(write_to / f"{strategy}_g{k:02d}_{v.label}.ppm", img)
                    scores.append((psnr(img, ref), ssim(img, ref)))
                return scores

            per_view = self._map(one, list(zip(sc.views, refs)))
            for k, g in enumerate(gammas):
                rows.append(MetricsRow(self.config.name, strategy, float(g), cfg.tau,
                                       _mean(s[k][0] for s in per_view), _mean(s[k][1] for s in per_view), *errs))
        return rows

    def cmd_sweep_gamma(self) -> None:
        d = self._dir("sweep-gamma")
        b = self.config.blend
        rows = self.sweep_gamma(gamma_grid(b.gamma_min, b.gamma_max, b.gamma_steps), IDW_STRATEGIES, d)
        write_csv(d / "sweep_gamma.csv", MetricsRow.COLUMNS, [r.values() for r in rows])

    def cmd_sweep_rho(self) -> None:
        d = self._dir("sweep-rho")
        r = self.config.register
        rows = []
        for rho in rho_grid(r.rho_min, r.rho_max, r.rho_steps):
            n = max(2, int(round(rho * r.training_views)))
            for i in range(1, len(self.scene.local_fields)):
                res = self.register_field(i, n)
                e = res.error
                rows.append([self.config.name, float(rho), n, self.scene.names[i], e.r_err, e.t_err, e.s_err,
                             res.estimates["A"].n_recovered, res.estimates["B"].n_recovered])
        write_csv(d / "sweep_rho.csv",
                  ["scene", "rho", "n_poses", "field", "r_err", "t_err", "s_err", "recovered_ref", "recovered_field"],
                  rows)

    def run(self, command: str) -> None:
        if command not in COMMANDS:
            raise ValueError(f"unknown command {command!r}")
        self.out.mkdir(parents=True, exist_ok=True)
        log.info("running %s on scene %s", command, self.config.name)
        getattr(self, "cmd_" + command.replace("-", "_"))()


def _mean(xs) -> float:
    return float(np.mean(list(xs)))


def format_report(scene: Scene, results: dict[int, RegistrationResult]) -> str:
    lines = [f"fieldfusion registration report v{REPORT_VERSION}", f"scene: {scene.config.name}",
             f"reference: {scene.names[0]}"]
    for i, res in results.items():
        lines += ["", f"[field {scene.names[i]}]"]
        for key, label in (("A", scene.names[0]), ("B", scene.names[i])):
            est = res.estimates[key]
            lines.append(f"{label}: poses {len(res.local_poses[key])}, recovered {est.n_recovered}, scale to gauge {est.scale!r}")
            lines.append(f"{label}: median transform to gauge")
            lines += ["  " + row for row in format_matrix(est.transform.matrix())]
            lines.append(f"{label}: candidates {len(est.candidates)}")
            for c in est.candidates:
                lines.append("  " + " ".join(repr(float(v)) for v in c.matrix()[:3].ravel()))
        lines.append(f"T_{scene.names[i]}{scene.names[0]}:")
        lines += ["  " + row for row in format_matrix(res.t_ba.matrix())]
        if res.error is not None:
            e = res.error
            lines.append(f"r_err_deg: {e.r_err!r}")
            lines.append(f"t_err: {e.t_err!r}")
            lines.append(f"s_err: {e.s_err!r}")
        for key, label in (("A", scene.names[0]), ("B", scene.names[i])):
            lines.append(f"{label}: query image sha256")
            lines += ["  " + h for h in res.image_hashes[key]]
    return "\n".join(lines) + "\n"


def run_experiment(config: SceneConfig, command: str, base_dir: Path | str = ".", workers: int | None = None) -> int:
    """Run one command; returns 0 on success and 1 on any pipeline failure."""
    try:
        Experiment(config, base_dir, workers).run(command)
    except (RegistrationFailure, ValueError, OSError) as exc:
        log.error("%s failed: %s", command, exc)
        return 1
    return 0
