"""Replication harness: configs, seeded batched runs, CLT verdicts, file output."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import tomli
import tomli_w

from .core import ConstantStep, SaddleUnknownError, StepSchedule
from .diagnostics import (asymptotic_covariance, covariance_report, gradient_noise_covariance_iid,
                          histogram_and_qq, jacobian_fd, ks_critical_value, ks_statistic,
                          longrun_covariance_batch_means, sample_covariance)
from .kernels import initial_state
from .models import build_preset
from .optimizers import ALGORITHMS, TruncationPolicy, run

log = logging.getLogger(__name__)

CHUNK = 500
MAX_FAILURE_FRACTION = 0.05
EMIT_KINDS = ("csv", "json", "svg")

# Per-preset run defaults. The "-clt" variants start at the saddle with a
# flatter schedule so that the averaged iterate is in its Gaussian regime by
# n = 5000 / 10000; see README for the reasoning.
PRESET_DEFAULTS = {
    "martingale-ev": dict(algorithm="seg", eta0=0.1, exponent_a=0.75, n_steps=5000,
                          initial_point="origin", checkpoints=[500, 5000],
                          frobenius_tolerance=0.15),
    "markov-ev": dict(algorithm="tseg", eta0=0.1, exponent_a=0.8, epsilon=0.25,
                      n_steps=5000, initial_point="origin", checkpoints=[500, 5000]),
    "martingale-ev-clt": dict(algorithm="seg", eta0=0.1, exponent_a=0.58, n_steps=5000,
                              initial_point="saddle", checkpoints=[500, 5000],
                              frobenius_tolerance=0.15),
    "markov-ev-clt": dict(algorithm="tseg", eta0=0.1, exponent_a=0.58, epsilon=1 / 0.58 - 1,
                          n_steps=10000, initial_point="saddle",
                          checkpoints=[500, 5000, 10000]),
    "linear": dict(algorithm="seg", eta0=0.2, exponent_a=0.58, n_steps=10000,
                   initial_point="origin", checkpoints=[500, 10000],
                   frobenius_tolerance=0.1),
    "remark3": dict(algorithm="seg", eta0=0.1, exponent_a=0.8, epsilon=0.25, n_steps=10000,
                    n_replications=1000, initial_point=[1.0, 0.0], checkpoints=[10000]),
}


def preset_names() -> list:
    return list(PRESET_DEFAULTS)


@dataclass
class ExperimentConfig:
    preset: str = "martingale-ev"
    algorithm: str = "seg"
    eta0: float = 0.1
    exponent_a: float = 0.75
    radius0: float = 5.0
    radius_growth: float = 5.0
    d_const: float = 1.0
    epsilon: float = 0.25
    max_truncations: int = 10_000
    restart_average: bool = False
    n_steps: int = 5000
    n_replications: int = 2000
    base_seed: int = 20240611
    trace_every: int = 0
    checkpoints: list = field(default_factory=lambda: [500, 5000])
    initial_point: Union[str, list] = "origin"
    sigma_samples: int = 2_000_000
    sigma_batches: int = 10_000
    ks_level: float = 0.01
    frobenius_tolerance: Optional[float] = None
    n_bins: int = 40
    output_dir: str = "out"
    emit: list = field(default_factory=lambda: ["csv", "json"])

    def __post_init__(self):
        if self.preset not in PRESET_DEFAULTS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {preset_names()}")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.n_steps < 1 or self.n_replications < 1:
            raise ValueError("n_steps and n_replications must be >= 1")
        if not 0 <= int(self.base_seed) < 2 ** 64:
            raise ValueError("base_seed must be an unsigned 64-bit integer")
        bad = set(self.emit) - set(EMIT_KINDS)
        if bad:
            raise ValueError(f"unknown emit kinds {sorted(bad)}")
        self.checkpoints = sorted({int(c) for c in self.checkpoints if 1 <= int(c) <= self.n_steps}
                                  | {int(self.n_steps)})
        self.emit = sorted(set(self.emit))
        StepSchedule(self.eta0, self.exponent_a)
        if self.algorithm == "tseg":
            self.policy()

    @classmethod
    def for_preset(cls, preset: str, **overrides) -> "ExperimentConfig":
        if preset not in PRESET_DEFAULTS:
            raise ValueError(f"unknown preset {preset!r}; choose from {preset_names()}")
        values = dict(PRESET_DEFAULTS[preset])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(preset=preset, **values)

    @classmethod
    def from_toml(cls, text: str, **overrides) -> "ExperimentConfig":
        data = tomli.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        preset = overrides.pop("preset", None) or data.pop("preset", "martingale-ev")
        data.pop("preset", None)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.for_preset(preset, **data)

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        return cls.from_toml(Path(path).read_text(), **overrides)

    def to_dict(self, echo: bool = False) -> dict:
        d = asdict(self)
        if d["frobenius_tolerance"] is None:
            del d["frobenius_tolerance"]
        if echo:
            # where files land does not change what is in them
            del d["output_dir"]
            del d["emit"]
        return d

    def to_toml(self) -> str:
        return tomli_w.dumps(dict(sorted(self.to_dict().items())))

    def schedule(self) -> StepSchedule:
        return StepSchedule(self.eta0, self.exponent_a)

    def policy(self) -> Optional[TruncationPolicy]:
        if self.algorithm != "tseg":
            return None
        return TruncationPolicy(self.radius0, self.radius_growth, self.d_const, self.epsilon,
                                self.max_truncations)


@dataclass
class ReplicationSummary:
    replication_id: int
    averaged_z: np.ndarray
    final_z: np.ndarray
    projection_stat: dict
    truncation_count: int
    wall_time: float
    failure: Optional[str] = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    summaries: list
    report: dict
    artifacts: list

    @property
    def passed(self) -> bool:
        return bool(self.report["verdict"]["passed"])


class ExperimentAborted(RuntimeError):
    pass


def resolve_initial_point(config: ExperimentConfig, problem) -> np.ndarray:
    ip = config.initial_point
    if isinstance(ip, str):
        if ip == "origin":
            return np.zeros(problem.dim)
        if ip == "saddle":
            if problem.saddle is None:
                raise SaddleUnknownError("initial_point = 'saddle' needs a known saddle")
            return problem.saddle.vector.copy()
        raise ValueError(f"initial_point must be 'origin', 'saddle' or a vector, got {ip!r}")
    z0 = np.asarray(ip, dtype=float)
    if z0.shape != (problem.dim,):
        raise ValueError(f"initial_point must have length {problem.dim}")
    return z0


def _run_chunk(config: ExperimentConfig, ids: Sequence[int]) -> dict:
    preset = build_preset(config.preset)
    problem, kernel = preset.problem, preset.kernel
    z0 = resolve_initial_point(config, problem)
    t0 = time.perf_counter()
    state = initial_state(kernel, z0, config.base_seed, ids)
    rec = run(config.algorithm, problem, kernel, state, config.schedule(), config.n_steps,
              z0=z0, policy=config.policy(), trace_every=config.trace_every,
              checkpoints=config.checkpoints, restart_average=config.restart_average,
              on_failure="mark")
    return dict(
        ids=np.asarray(ids), averaged=rec.averaged_z, final=rec.final_z,
        checkpoints={k: v for k, v in rec.checkpoint_means.items()},
        truncations=rec.truncation_count, last_truncation=rec.last_truncation_step,
        failed=rec.failed_step, reasons=rec.failure_reason,
        trace_steps=rec.trace_steps, distance=rec.distance_trace,
        suboptimality=rec.suboptimality_trace,
        wall=time.perf_counter() - t0,
    )


def run_replications(config: ExperimentConfig, workers: int = 1) -> dict:
    """Run every replication in chunks and merge the results in id order."""
    ids = np.arange(config.n_replications)
    chunks = [ids[i:i + CHUNK] for i in range(0, ids.size, CHUNK)]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, [config] * len(chunks), chunks))
    else:
        parts = [_run_chunk(config, c) for c in chunks]
    merged = dict(
        ids=np.concatenate([p["ids"] for p in parts]),
        averaged=np.concatenate([p["averaged"] for p in parts]),
        final=np.concatenate([p["final"] for p in parts]),
        checkpoints={k: np.concatenate([p["checkpoints"][k] for p in parts])
                     for k in parts[0]["checkpoints"]},
        truncations=np.concatenate([p["truncations"] for p in parts]),
        last_truncation=np.concatenate([p["last_truncation"] for p in parts]),
        failed=np.concatenate([p["failed"] for p in parts]),
        reasons=sum((list(p["reasons"]) for p in parts), []),
        wall=np.concatenate([np.full(p["ids"].size, p["wall"] / p["ids"].size) for p in parts]),
        trace_steps=parts[0]["trace_steps"],
    )
    for key in ("distance", "suboptimality"):
        merged[key] = (np.concatenate([p[key] for p in parts], axis=1)
                       if parts[0][key] is not None else None)
    return merged


def noise_covariance(config: ExperimentConfig, preset=None) -> np.ndarray:
    """Sigma (i.i.d. kernels) or the batch-means Sigma_s (Markov kernels) at z*."""
    preset = preset or build_preset(config.preset)
    problem = preset.problem
    if problem.saddle is None:
        raise SaddleUnknownError("noise covariance needs z*")
    z_star = problem.saddle.vector
    if preset.markov:
        return longrun_covariance_batch_means(problem, z_star, preset.kernel, config.sigma_samples,
                                              config.sigma_batches, seed=config.base_seed)
    return gradient_noise_covariance_iid(problem, z_star, preset.kernel, config.sigma_samples,
                                         seed=config.base_seed)


def theoretical_covariance(config: ExperimentConfig, preset=None):
    preset = preset or build_preset(config.preset)
    problem = preset.problem
    if problem.saddle is None or problem.mean_field is None:
        raise SaddleUnknownError("CLT check needs z* and the mean field")
    Qstar = jacobian_fd(problem.mean_field, problem.saddle.vector)
    Sigma = noise_covariance(config, preset)
    return Qstar, Sigma, asymptotic_covariance(Qstar, Sigma)


def _summaries(merged: dict, z_star: Optional[np.ndarray]) -> list:
    out = []
    for i, rid in enumerate(merged["ids"]):
        proj = {}
        if z_star is not None:
            for k, means in merged["checkpoints"].items():
                proj[k] = float(np.sqrt(k) * np.sum(means[i] - z_star))
        failure = None
        if merged["failed"][i]:
            failure = f"{merged['reasons'][i]} at step {merged['failed'][i]}"
        out.append(ReplicationSummary(int(rid), merged["averaged"][i], merged["final"][i], proj,
                                      int(merged["truncations"][i]), float(merged["wall"][i]),
                                      failure))
    return out


def run_experiment(config: ExperimentConfig, workers: int = 1, write: bool = True) -> ExperimentResult:
    preset = build_preset(config.preset)
    problem = preset.problem
    merged = run_replications(config, workers)
    ok = merged["failed"] == 0
    n_failed = int((~ok).sum())
    if n_failed > MAX_FAILURE_FRACTION * config.n_replications:
        raise ExperimentAborted(
            f"{n_failed} of {config.n_replications} replications failed; first: "
            + next(r for r in merged["reasons"] if r) )
    z_star = problem.saddle.vector if problem.saddle is not None else None
    summaries = _summaries(merged, z_star)

    report = {
        "config": config.to_dict(echo=True),
        "preset": preset.description,
        "replications": {"total": config.n_replications, "succeeded": int(ok.sum()),
                         "failed": n_failed},
        "mean_averaged_z": merged["averaged"][ok].mean(axis=0).tolist(),
        "truncations": {"total": int(merged["truncations"].sum()),
                        "max": int(merged["truncations"].max()),
                        "last_step": int(merged["last_truncation"].max())},
    }
    verdict = {"passed": True}
    hist = {}
    if z_star is not None:
        report["equilibrium"] = z_star.tolist()
    if z_star is not None and problem.mean_field is not None and ok.sum() < 2:
        verdict = {"passed": False, "reason": "need at least two successful replications"}
    elif z_star is not None and problem.mean_field is not None:
        Qstar, Sigma, V = theoretical_covariance(config, preset)
        ones = np.ones(problem.dim)
        sigma2 = float(ones @ V @ ones)
        m = int(ok.sum())
        crit = float(ks_critical_value(m, config.ks_level))
        ks = {}
        for k, means in merged["checkpoints"].items():
            proj = np.sqrt(k) * (means[ok] - z_star).sum(axis=1)
            ks[str(k)] = ks_statistic(proj, np.sqrt(sigma2))
            if proj.max() > proj.min():
                hist[k] = histogram_and_qq(proj, config.n_bins, np.sqrt(sigma2))
        scaled = np.sqrt(config.n_steps) * (merged["averaged"][ok] - z_star)
        cov = covariance_report(scaled, V, {"ones": ones})
        report.update({
            "Qstar": Qstar.tolist(),
            "Sigma": Sigma.tolist(),
            "covariance": cov.to_dict(),
            "projection_variance_theoretical": sigma2,
            "projection_variance_empirical": float(np.var(
                np.sqrt(config.n_steps) * (merged["averaged"][ok] - z_star).sum(axis=1), ddof=1)),
            "ks": ks,
            "ks_critical": crit,
        })
        final_ks = ks[str(config.n_steps)]
        verdict["ks_pass"] = bool(final_ks < crit)
        verdict["passed"] = verdict["ks_pass"]
        if config.frobenius_tolerance is not None:
            verdict["frobenius_pass"] = bool(cov.frobenius_rel_error <= config.frobenius_tolerance)
            verdict["passed"] = verdict["passed"] and verdict["frobenius_pass"]
    report["verdict"] = verdict

    artifacts = []
    if write:
        artifacts = emit(config, merged, summaries, report, hist)
    return ExperimentResult(config, summaries, report, artifacts)


def clt_check(config: ExperimentConfig, workers: int = 1, write: bool = True) -> dict:
    """KS test of the projected statistic plus the full-covariance comparison."""
    preset = build_preset(config.preset)
    if preset.problem.saddle is None:
        raise SaddleUnknownError(f"preset {config.preset!r} has no known saddle")
    result = run_experiment(config, workers=workers, write=write)
    rep = result.report
    return {
        "preset": config.preset,
        "sigma2": rep["projection_variance_theoretical"],
        "ks": rep["ks"],
        "ks_critical": rep["ks_critical"],
        "frobenius_rel_error": rep["covariance"]["frobenius_rel_error"],
        "verdict": rep["verdict"],
        "passed": rep["verdict"]["passed"],
        "artifacts": result.artifacts,
    }


# ---------------------------------------------------------------- divergence demo

@dataclass
class DivergenceResult:
    eta: float
    steps: np.ndarray
    sgda_mean_sq: np.ndarray
    sgda_se: np.ndarray
    seg_mean_sq: np.ndarray
    seg_mean_dist: np.ndarray
    one_step_mean: float
    one_step_se: float
    one_step_prediction: float
    checks: dict

    def rows(self):
        for i, k in enumerate(self.steps):
            yield (int(k), self.sgda_mean_sq[i], self.sgda_se[i], self.seg_mean_sq[i],
                   self.seg_mean_dist[i])


def divergence_demo(eta: float = 0.1, n_steps: int = 10_000, n_replications: int = 1000,
                    seed: int = 20240611, seg_schedule: Optional[StepSchedule] = None,
                    one_step_replications: int = 100_000, trace_every: int = 10,
                    check_step: int = 200, output_dir=None) -> DivergenceResult:
    """SGDA (constant eta) against SEG (decaying schedule) on the spiral game from (1, 0)."""
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    if check_step > n_steps:
        raise ValueError("check_step exceeds n_steps")
    seg_schedule = seg_schedule or StepSchedule(PRESET_DEFAULTS["remark3"]["eta0"],
                                                PRESET_DEFAULTS["remark3"]["exponent_a"])
    preset = build_preset("remark3")
    problem, kernel = preset.problem, preset.kernel
    z0 = np.array([1.0, 0.0])

    # one-step second moment, its own large batch
    st = initial_state(kernel, z0, seed, np.arange(one_step_replications), channel=3)
    one = run("sgda", problem, kernel, st, ConstantStep(eta), 1, z0=z0)
    sq1 = np.sum(one.final_z ** 2, axis=1)
    pred = (1 + eta ** 2) * float(z0 @ z0) + 2 * eta ** 2

    ids = np.arange(n_replications)
    sg = run("sgda", problem, kernel, initial_state(kernel, z0, seed, ids, channel=4),
             ConstantStep(eta), n_steps, z0=z0, trace_every=trace_every, on_failure="mark")
    eg = run("seg", problem, kernel, initial_state(kernel, z0, seed, ids, channel=5),
             seg_schedule, n_steps, z0=z0, trace_every=trace_every, on_failure="mark")
    steps = sg.trace_steps
    d_sg, d_eg = sg.distance_trace, eg.distance_trace
    sq_sg = d_sg ** 2
    result = DivergenceResult(
        eta=eta, steps=steps,
        sgda_mean_sq=sq_sg.mean(axis=1),
        sgda_se=sq_sg.std(axis=1, ddof=1) / np.sqrt(n_replications),
        seg_mean_sq=(d_eg ** 2).mean(axis=1),
        seg_mean_dist=d_eg.mean(axis=1),
        one_step_mean=float(sq1.mean()),
        one_step_se=float(sq1.std(ddof=1) / np.sqrt(sq1.size)),
        one_step_prediction=pred,
        checks={},
    )
    i_check = int(np.searchsorted(steps, check_step))
    if i_check >= steps.size or steps[i_check] != check_step:
        raise ValueError("check_step must be a trace step (1 or a multiple of trace_every)")
    result.checks = {
        "one_step_z": (result.one_step_mean - pred) / result.one_step_se,
        "one_step_pass": bool(abs(result.one_step_mean - pred) <= 3 * result.one_step_se),
        "sgda_growth_pass": bool(result.sgda_mean_sq[i_check] > result.sgda_mean_sq[0]),
        "seg_final_mean_dist": float(result.seg_mean_dist[-1]),
        "seg_converged_pass": bool(result.seg_mean_dist[-1] < 0.1),
    }
    if output_dir is not None:
        write_divergence(result, Path(output_dir))
    return result


# ---------------------------------------------------------------- file output

def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    path.write_text(buf.getvalue())


def summaries_header(dim: int, checkpoints) -> list:
    return (["replication_id"] + [f"projection_stat_at_{k}" for k in checkpoints]
            + [f"zbar_{j + 1}" for j in range(dim)] + ["truncation_count", "failure"])


def write_divergence(result: DivergenceResult, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / "divergence.csv"
    _write_csv(path, ["step", "sgda_mean_sq_norm", "sgda_se", "seg_mean_sq_norm", "seg_mean_dist"],
               result.rows())
    return path


def emit(config: ExperimentConfig, merged: dict, summaries: list, report: dict, hist: dict) -> list:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    dim = merged["averaged"].shape[1]
    if "csv" in config.emit:
        rows = []
        for s in summaries:
            rows.append([s.replication_id]
                        + [s.projection_stat.get(k, float("nan")) for k in config.checkpoints]
                        + [float(v) for v in s.averaged_z] + [s.truncation_count, s.failure or ""])
        path = out / "summaries.csv"
        _write_csv(path, summaries_header(dim, config.checkpoints), rows)
        written.append(path)
        if merged["trace_steps"] is not None and merged["distance"] is not None:
            ok = merged["failed"] == 0
            dist = merged["distance"][:, ok].mean(axis=1)
            sub = (merged["suboptimality"][:, ok].mean(axis=1)
                   if merged["suboptimality"] is not None else np.full(dist.shape, np.nan))
            path = out / "trace.csv"
            _write_csv(path, ["step", "distance", "suboptimality"],
                       zip(merged["trace_steps"].tolist(), dist, sub))
            written.append(path)
        for k, h in sorted(hist.items()):
            path = out / f"histogram_{k}.csv"
            _write_csv(path, ["bin_left", "bin_right", "density"],
                       zip(h.edges[:-1], h.edges[1:], h.densities))
            written.append(path)
            path = out / f"qq_{k}.csv"
            _write_csv(path, ["theoretical", "sample"], zip(h.qq_theoretical, h.qq_sample))
            written.append(path)
    if "json" in config.emit:
        path = out / "report.json"
        path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        written.append(path)
    if "svg" in config.emit and hist:
        path = out / "figure.svg"
        path.write_text(render_svg(hist, report.get("projection_variance_theoretical", 1.0)))
        written.append(path)
    return written


def render_svg(hist: dict, sigma2: float, width: int = 360, height: int = 240) -> str:
    """Histogram bars of each checkpoint with the N(0, sigma2) density on top."""
    panels = []
    sigma = np.sqrt(sigma2)
    for p, (k, h) in enumerate(sorted(hist.items())):
        x0 = p * (width + 20) + 10
        lo, hi = min(h.edges[0], -4 * sigma), max(h.edges[-1], 4 * sigma)
        grid = np.linspace(lo, hi, 200)
        dens = np.exp(-grid ** 2 / (2 * sigma2)) / np.sqrt(2 * np.pi * sigma2)
        top = max(h.densities.max(), dens.max()) * 1.1
        sx = lambda x: x0 + (x - lo) / (hi - lo) * width
        sy = lambda y: 20 + height - y / top * height
        parts = [f'<text x="{x0}" y="14" font-size="12">n = {k}</text>']
        for a, b, d in zip(h.edges[:-1], h.edges[1:], h.densities):
            parts.append(f'<rect x="{sx(a):.2f}" y="{sy(d):.2f}" width="{sx(b) - sx(a):.2f}" '
                         f'height="{sy(0) - sy(d):.2f}" fill="#9ecae1" stroke="#3182bd"/>')
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(grid, dens))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="#de2d26" stroke-width="1.5"/>')
        panels.append("\n".join(parts))
    total_w = len(hist) * (width + 20) + 10
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{height + 30}">\n'
            + "\n".join(panels) + "\n</svg>\n")
