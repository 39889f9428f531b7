"""Experiment harness: config loading, sweeps, metrics, reports.

A run config is one JSON document (nested key-value) describing the inverse
problem, the oracle, the sampler, optional sweep lists, and seeds.  Each
(sweep point x seed) pair becomes one record; per-run randomness is derived
from (seed, salt) streams so results are independent of execution order and
worker count.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats as _stats

from .conjugate import precompute_table, table_to_csv
from .errors import ConfigError, DivergenceError
from .operators import BlockAverage, CirculantBlur, DenseOperator, Mask
from .oracles import (
    GaussianDiffusionOracle,
    GaussianFlowOracle,
    GaussianModel,
    MixtureDiffusionOracle,
    MixtureFlowOracle,
    MixtureModel,
    exact_posterior,
)
from .samplers import METHODS, SamplerSpec, sample
from .schedules import DiffusionSchedule, FlowSchedule, GuidanceConfig
from .tensorio import read_tensor, write_tensor

SWEEP_GUARD = 10_000

# Default tuning grids for few-step sweeps; w is log-ish spaced because the
# usable guidance scale spans more than an order of magnitude.
DEFAULT_W_SWEEP = (1.0, 2.0, 3.0, 5.0, 8.0, 12.0, 18.0, 24.0, 30.0)
DEFAULT_LAMBDA_SWEEP = (-1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 1.0)
DEFAULT_TAU_SWEEP = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)

_X0_SALT = 101
_OBS_SALT = 211
_CHAIN_SALT = 307

CSV_HEADER = ("method", "w", "lambda", "tau", "nfe", "seed",
              "mse", "psnr", "observed_residual", "wall_time_ms")


@dataclass(frozen=True)
class RunRecord:
    method: str
    w: float
    lam: float
    tau: float
    nfe: int
    seed: int
    mse: float | None
    psnr: float | None
    observed_residual: float | None
    wall_time_ms: float

    @property
    def diverged(self) -> bool:
        return self.mse is None


@dataclass
class RunReport:
    records: list
    aggregates: dict = field(default_factory=dict)

    @property
    def diverged_count(self) -> int:
        return sum(1 for r in self.records if r.diverged)


def psnr_from_mse(mse: float, peak: float = 1.0) -> float:
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


# --------------------------------------------------------------------------
# config handling


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def apply_overrides(config: dict, overrides) -> dict:
    """Apply dotted-path overrides like sampler.w=3; values parse as JSON
    with a plain-string fallback."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key.path=value")
        path, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = config
        parts = path.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {path!r} crosses a non-object")
        node[parts[-1]] = value
    return config


def build_operator(desc: dict):
    kind = desc.get("kind")
    if kind == "mask":
        if "bitmap_file" in desc:
            bitmap = read_tensor(desc["bitmap_file"])
            indices = np.flatnonzero(bitmap != 0.0)
            return Mask(indices, bitmap.size)
        if "indices_file" in desc:
            indices = read_tensor(desc["indices_file"]).astype(int)
        else:
            indices = desc.get("indices")
        if indices is None:
            raise ConfigError("mask operator needs indices, indices_file, or bitmap_file")
        return Mask(indices, int(desc["in_dim"])) if "in_dim" in desc else Mask(
            indices, int(desc["dim"]))
    if kind == "block_average":
        return BlockAverage(int(desc["factor"]), int(desc["height"]), int(desc["width"]))
    if kind == "circulant_blur":
        kernel = (read_tensor(desc["kernel_file"]) if "kernel_file" in desc
                  else np.asarray(desc["kernel"], dtype=float))
        threshold = float(desc.get("threshold", 1e-8))
        if kernel.ndim == 2:
            return CirculantBlur(kernel, shape=(int(desc["height"]), int(desc["width"])),
                                 threshold=threshold)
        return CirculantBlur(kernel, in_dim=int(desc["in_dim"]), threshold=threshold)
    if kind == "dense":
        matrix = (read_tensor(desc["matrix_file"]) if "matrix_file" in desc
                  else np.asarray(desc["matrix"], dtype=float))
        return DenseOperator(matrix)
    raise ConfigError(f"unknown operator kind {kind!r}")


def _coerce_profile(value, dim: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(dim, float(arr))
    if arr.shape != (dim,):
        raise ConfigError(f"expected scalar or length-{dim} list, got shape {arr.shape}")
    return arr


def build_data_model(desc: dict):
    """Gaussian or mixture data distribution from a config block."""
    source = desc.get("source", "gaussian")
    dim = int(desc["dim"])
    if source == "gaussian":
        return GaussianModel(
            mean=_coerce_profile(desc.get("mean", 0.0), dim),
            var=_coerce_profile(desc.get("var", 1.0), dim),
        )
    if source == "mixture":
        comps = tuple(
            GaussianModel(mean=_coerce_profile(m, dim), var=_coerce_profile(v, dim))
            for m, v in zip(desc["means"], desc["vars"])
        )
        return MixtureModel(weights=np.asarray(desc["weights"], dtype=float),
                            components=comps)
    raise ConfigError(f"unknown data source {source!r}")


def _draw_x0(problem: dict, seed: int) -> np.ndarray:
    data = problem["data"]
    if data.get("source") == "tensor_file":
        return read_tensor(data["path"]).reshape(-1)
    model = build_data_model(data)
    rng = np.random.default_rng([seed, _X0_SALT])
    if isinstance(model, MixtureModel):
        return model.sample(rng, 1)[0]
    return model.mean + np.sqrt(model.var) * rng.standard_normal(model.dim)


def degrade(x0, op, sigma_y: float, seed: int) -> np.ndarray:
    """Forward model: y = H x0 + sigma_y * z with a seeded draw."""
    x0 = np.asarray(x0, dtype=float)
    y = op.apply(x0)
    if sigma_y > 0:
        rng = np.random.default_rng([seed, _OBS_SALT])
        y = y + sigma_y * rng.standard_normal(y.shape)
    return y


def build_oracle(model_desc: dict, problem: dict, sched):
    kind = model_desc.get("kind", "auto")
    if kind == "external":
        from .external import ExternalOracle

        return ExternalOracle(model_desc["argv"],
                              timeout=float(model_desc.get("timeout", 30.0)),
                              jvp_mode=model_desc.get("jvp_mode", "remote"))
    data_desc = model_desc if "dim" in model_desc else problem["data"]
    model = build_data_model(data_desc)
    if kind in ("auto", "gaussian_diffusion", "mixture_diffusion"):
        if isinstance(sched, DiffusionSchedule):
            if isinstance(model, MixtureModel):
                return MixtureDiffusionOracle(model, sched)
            return GaussianDiffusionOracle(model, sched)
    if isinstance(model, MixtureModel):
        return MixtureFlowOracle(model, sched)
    return GaussianFlowOracle(model, sched)


def guidance_from_sampler(desc: dict, sigma_y: float) -> GuidanceConfig:
    return GuidanceConfig(
        w=float(desc.get("w", 1.0)),
        lam=float(desc.get("lambda", 0.0)),
        tau=float(desc.get("tau", 0.6)),
        nfe=int(desc.get("nfe", 20)),
        sigma_y=sigma_y,
        schedule_kind=desc.get("schedule_kind", "adaptive_paper"),
        t_floor=float(desc.get("t_floor", 1e-4)),
    )


def sweep_points(config: dict):
    """Cross-product of the sweep lists over the base sampler block."""
    sampler = config.get("sampler")
    if sampler is None:
        raise ConfigError("config needs a sampler block")
    method = sampler.get("method")
    if method not in METHODS:
        raise ConfigError(f"sampler.method must be one of {METHODS}")
    sweep = config.get("sweep", {}) or {}
    unknown = set(sweep) - {"w", "lambda", "tau", "nfe"}
    if unknown:
        raise ConfigError(f"sweep keys {sorted(unknown)} not supported")
    ws = sweep.get("w", [sampler.get("w", 1.0)])
    lams = sweep.get("lambda", [sampler.get("lambda", 0.0)])
    taus = sweep.get("tau", [sampler.get("tau", 0.6)])
    nfes = sweep.get("nfe", [sampler.get("nfe", 20)])
    points = [dict(sampler, w=w, **{"lambda": lam}, tau=tau, nfe=nfe)
              for w in ws for lam in lams for tau in taus for nfe in nfes]
    return points


def run(config: dict, *, threads: int = 1, output_dir=None,
        write_outputs: bool = True) -> RunReport:
    """Execute the sweep described by the config; returns the full report.

    Divergent runs are recorded with empty metrics rather than aborting the
    sweep.
    """
    problem = config.get("problem")
    if problem is None:
        raise ConfigError("config needs a problem block")
    seeds = list(config.get("seeds", [0]))
    points = sweep_points(config)
    if len(points) * len(seeds) > SWEEP_GUARD:
        raise ConfigError(
            f"sweep size {len(points) * len(seeds)} exceeds the guard {SWEEP_GUARD}")

    sched_desc = config.get("schedule", {})
    method = config["sampler"]["method"]
    if method.endswith("diffusion"):
        sched = DiffusionSchedule(
            beta_min=float(sched_desc.get("beta_min", 0.1)),
            beta_max=float(sched_desc.get("beta_max", 20.0)),
        )
    else:
        sched = FlowSchedule()
    op = build_operator(problem["operator"])
    sigma_y = float(problem.get("sigma_y", 0.0))
    oracle = build_oracle(config.get("model", {}), problem, sched)
    peak = float(config.get("peak", 1.0))
    out_dir = output_dir or config.get("output_dir")

    jobs = [(pi, seed) for pi in range(len(points)) for seed in seeds]

    def one(job):
        pi, seed = job
        desc = points[pi]
        x0 = _draw_x0(problem, seed)
        y = degrade(x0, op, sigma_y, seed)
        cfg = guidance_from_sampler(desc, sigma_y)
        spec = SamplerSpec(method=desc["method"], guidance=cfg)
        rng = np.random.default_rng([seed, _CHAIN_SALT])
        z = rng.standard_normal(op.in_dim)
        started = time.perf_counter()
        try:
            result = sample(spec, y, op, oracle, sched, z)
        except DivergenceError:
            elapsed = (time.perf_counter() - started) * 1e3
            rec = RunRecord(
                method=desc["method"], w=float(desc["w"]), lam=float(desc["lambda"]),
                tau=float(desc["tau"]), nfe=int(desc["nfe"]), seed=int(seed),
                mse=None, psnr=None, observed_residual=None, wall_time_ms=elapsed,
            )
            return rec, None
        elapsed = (time.perf_counter() - started) * 1e3
        mse = float(np.mean((result.x - x0) ** 2))
        resid = float(np.max(np.abs(op.apply(result.x) - y)))
        rec = RunRecord(
            method=desc["method"], w=float(desc["w"]), lam=float(desc["lambda"]),
            tau=float(desc["tau"]), nfe=int(desc["nfe"]), seed=int(seed),
            mse=mse, psnr=psnr_from_mse(mse, peak), observed_residual=resid,
            wall_time_ms=elapsed,
        )
        return rec, result.x

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(one, jobs))
    else:
        outcomes = [one(job) for job in jobs]

    records = []
    for (pi, seed), (rec, x) in zip(jobs, outcomes):
        records.append(rec)
        if write_outputs and out_dir is not None and x is not None:
            os.makedirs(out_dir, exist_ok=True)
            write_tensor(os.path.join(out_dir, f"recon_{pi:04d}_{seed}.cji"), x)

    report = RunReport(records=records, aggregates=_aggregate(records))
    if write_outputs and out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.csv"), "w", encoding="utf-8") as fh:
            fh.write(report_to_csv(report))
        with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
            json.dump(report.aggregates, fh, indent=2, sort_keys=True)
    return report


def _aggregate(records) -> dict:
    groups: dict = {}
    for rec in records:
        key = f"{rec.method} w={rec.w:g} lambda={rec.lam:g} tau={rec.tau:g} nfe={rec.nfe}"
        groups.setdefault(key, []).append(rec.mse)
    out = {}
    for key, values in groups.items():
        ok = [v for v in values if v is not None]
        entry = {"runs": len(values), "diverged": len(values) - len(ok)}
        if ok:
            arr = np.asarray(ok)
            entry["mse_mean"] = float(arr.mean())
            entry["mse_stderr"] = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
        out[key] = entry
    return out


def report_to_csv(report: RunReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in report.records:
        writer.writerow([
            r.method, repr(r.w), repr(r.lam), repr(r.tau), r.nfe, r.seed,
            "" if r.mse is None else repr(r.mse),
            "" if r.psnr is None else repr(r.psnr),
            "" if r.observed_residual is None else repr(r.observed_residual),
            repr(r.wall_time_ms),
        ])
    return buf.getvalue()


def report_from_csv(text: str) -> RunReport:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != CSV_HEADER:
        raise ConfigError(f"unexpected report header {header}")
    records = []
    for row in reader:
        if not row:
            continue
        records.append(RunRecord(
            method=row[0], w=float(row[1]), lam=float(row[2]), tau=float(row[3]),
            nfe=int(row[4]), seed=int(row[5]),
            mse=float(row[6]) if row[6] else None,
            psnr=float(row[7]) if row[7] else None,
            observed_residual=float(row[8]) if row[8] else None,
            wall_time_ms=float(row[9]),
        ))
    return RunReport(records=records, aggregates=_aggregate(records))


def coeff_dump(config: dict) -> str:
    """Coefficient table CSV for the configured sampler grid."""
    method = config["sampler"]["method"]
    sched_desc = config.get("schedule", {})
    if method.endswith("diffusion"):
        sched = DiffusionSchedule(
            beta_min=float(sched_desc.get("beta_min", 0.1)),
            beta_max=float(sched_desc.get("beta_max", 20.0)),
        )
    else:
        sched = FlowSchedule()
    sigma_y = float(config.get("problem", {}).get("sigma_y", 0.0))
    cfg = guidance_from_sampler(config["sampler"], sigma_y)
    spec = SamplerSpec(method=method, guidance=cfg)
    table_cfg = cfg if method.startswith("conjugate") else replace(cfg, w=0.0)
    table = precompute_table(spec.resolved_grid(), table_cfg, sched)
    return table_to_csv(table)


@dataclass
class PosteriorStats:
    unobserved_mean: np.ndarray
    unobserved_var: np.ndarray
    pooled_var: float
    ks_pvalues: np.ndarray
    max_observed_residual: float
    n_samples: int
    low_sample_warning: bool
    degenerate_variance: bool


def posterior_stats(samples, op, y, prior: GaussianModel,
                    sigma_y: float = 0.0) -> PosteriorStats:
    """Compare reconstructions against the exact Gaussian posterior.

    Reports per-coordinate mean/variance on the unobserved subspace (where
    diag(P) ~ 0), a KS test per unobserved coordinate against the exact
    posterior marginal, and the worst observed-space residual.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2:
        raise ValueError("samples must be (n, d)")
    n = samples.shape[0]
    post = exact_posterior(prior, op, y, sigma_y)
    diag_p = np.diag(op.dense_proj())
    unobserved = np.where(diag_p < 0.5)[0]
    mean = samples[:, unobserved].mean(axis=0) - post.mean[unobserved]
    var = samples[:, unobserved].var(axis=0, ddof=1) if n > 1 else np.zeros(unobserved.size)
    post_std = post.marginal_std()[unobserved]
    pvals = np.empty(unobserved.size)
    degenerate = bool(np.any(var == 0.0))
    for i, j in enumerate(unobserved):
        std = post_std[i]
        if std == 0 or samples[:, j].std() == 0:
            pvals[i] = 0.0
            continue
        pvals[i] = _stats.kstest(samples[:, j], "norm",
                                 args=(post.mean[j], std)).pvalue
    resid = float(np.max(np.abs(op.apply(samples) - y)))
    rel_var = var / np.maximum(post_std ** 2, 1e-300)
    return PosteriorStats(
        unobserved_mean=mean,
        unobserved_var=rel_var,
        pooled_var=float(np.mean(rel_var)) if unobserved.size else 0.0,
        ks_pvalues=pvals,
        max_observed_residual=resid,
        n_samples=n,
        low_sample_warning=n < 30,
        degenerate_variance=degenerate,
    )
