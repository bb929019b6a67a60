"""Experiment files: seed generation, per-seed renormalisation runs and report emission."""

import csv
import logging
import os
import time
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import orjson
import yaml
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, model_validator
from tqdm import tqdm

from RG import settings
from RG.errors import ConfigError, ModeOutOfWindow, RenormError
from RG.fourier_core import FourierField, norm, prime, window
from RG.homotopy_eliminator import EliminationConfig
from RG.kt_basis import load_basis
from RG.renorm_operator import CSV_HEADER, RenormConfig, renorm_iterate
from RG.spectral_analysis import shoot_stable

logger = logging.getLogger(__name__)

JSON_OPTS = orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY


class ModeSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    k: list[int]
    amp: float
    amp_im: float = 0.0
    v: Optional[list[float]] = None


class RandomSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    count: int = Field(ge=1)
    amp: float
    seed: int
    radius: int = Field(default=settings.SEED_RANDOM_RADIUS, ge=1)


class SeedSpec(BaseModel):
    """One initial field: exactly one of file, preset, modes or random."""

    model_config = ConfigDict(extra="forbid")

    name: Optional[str] = None
    file: Optional[str] = None
    preset: Optional[Literal["constant", "unstable"]] = None
    amp: float = 1e-4
    modes: Optional[list[ModeSpec]] = None
    random: Optional[RandomSpec] = None
    real: bool = True
    shoot_targets: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _one_source(self):
        sources = [s for s in ("file", "preset", "modes", "random") if getattr(self, s) is not None]
        if len(sources) != 1:
            raise ValueError(f"a seed needs exactly one of file/preset/modes/random, got {sources or 'none'}")
        if self.file is not None and not Path(self.file).is_file():
            raise ValueError(f"seed file {self.file} does not exist")
        return self

    def label(self, position):
        if self.name:
            return self.name
        if self.preset:
            return f"{position:02d}_{self.preset}"
        if self.random:
            return f"{position:02d}_random{self.random.seed}"
        return f"{position:02d}_seed"


class RunConfig(BaseModel):
    """Keys shared by every command: the basis, the window, the radii and the solver settings."""

    model_config = ConfigDict(extra="forbid")

    basis: str = "golden"
    power: int = Field(default=1, ge=1)
    K: int = Field(default=settings.DEFAULT_K, ge=1)
    rho: float = Field(default=settings.DEFAULT_RHO, gt=0)
    rho_prime: float = Field(default=settings.DEFAULT_RHO_PRIME, gt=0)
    sigma: Optional[float] = Field(default=None, gt=0)
    kappa: Optional[float] = Field(default=None, gt=0, lt=1)
    iters: int = Field(default=10, ge=1)
    rescale_mode: Literal["mean_dual", "lambda1"] = "mean_dual"
    min_rescale: float = Field(default=settings.MIN_RESCALE, ge=0)
    elim: EliminationConfig = EliminationConfig()

    @model_validator(mode="after")
    def _radii(self):
        if not self.rho_prime < self.rho:
            raise ValueError(f"need rho_prime < rho, got rho={self.rho}, rho_prime={self.rho_prime}")
        return self

    def renorm_config(self, quiet=True, K=None):
        b = load_basis(self.basis, self.power)
        elim = self.elim.model_copy(update={"rho": self.rho, "rho_prime": self.rho_prime})
        return RenormConfig.build(
            b, K=self.K if K is None else K, rho=self.rho, rho_prime=self.rho_prime, sigma=self.sigma,
            kappa=self.kappa, elim=elim, max_iters=self.iters, rescale_mode=self.rescale_mode,
            min_rescale=self.min_rescale, quiet=quiet,
        )


class ExperimentSpec(RunConfig):
    name: str
    seeds: list[SeedSpec] = Field(min_length=1)
    out_dir: Optional[str] = None


def _read_mapping(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist", key="path")
    raw = path.read_bytes()
    if path.suffix.lower() in (".yaml", ".yml"):
        try:
            data = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path} is not valid YAML: {exc}", key="path") from exc
    else:
        try:
            data = orjson.loads(raw)
        except orjson.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}", key="path") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a mapping at the top level", key="path")
    return data


def load_experiment(path, overrides=None):
    """Parse a JSON or YAML experiment file; CLI overrides replace top-level keys."""
    data = _read_mapping(path)
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentSpec.model_validate(data)


def load_run_config(path=None, overrides=None):
    """Shared command config: file keys first, then every override that is not None.

    An experiment file works too; its name, seeds and out_dir are ignored here.
    """
    data = _read_mapping(path) if path else {}
    for key in set(ExperimentSpec.model_fields) - set(RunConfig.model_fields):
        data.pop(key, None)
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig.model_validate(data)


def _check_mode(k, K, dim):
    if len(k) != dim:
        raise ModeOutOfWindow(f"mode {k} does not have dimension {dim}", key="k")
    if sum(abs(x) for x in k) > K:
        raise ModeOutOfWindow(f"mode {k} lies outside the window |k| <= {K}", key="k")


def _with_pairs(modes, dim, K, real):
    """Mode map with the conjugate partner added at −k when real."""
    out = {}
    for k, v in modes:
        out[k] = out.get(k, 0) + v
        if real and any(k):
            mk = tuple(-x for x in k)
            out[mk] = out.get(mk, 0) + np.conj(v)
    return FourierField.from_modes(out, K, dim=dim, real=real) if out else FourierField.zeros(dim, K, real=real)


def generate_field(gen, basis, K):
    """ω plus the perturbation described by a seed spec."""
    dim = basis.d
    omega = FourierField.constant(basis.omega, K, real=True)
    if gen.file is not None:
        field = FourierField.from_json(Path(gen.file).read_bytes())
        if field.dim != dim or field.K != K:
            raise ConfigError(f"seed file {gen.file} has (d={field.dim}, K={field.K}), expected (d={dim}, K={K})", key="file")
        return field
    if gen.preset == "constant":
        return omega
    if gen.preset == "unstable":
        return omega.add_constant(gen.amp * basis.unstable_basis()[:, 0])
    if gen.modes is not None:
        pieces = []
        for spec in gen.modes:
            k = tuple(spec.k)
            _check_mode(k, K, dim)
            v = np.array(spec.v if spec.v is not None else np.eye(dim)[0], dtype=complex)
            if len(v) != dim:
                raise ConfigError(f"mode direction {spec.v} does not have dimension {dim}", key="v")
            pieces.append((k, complex(spec.amp, spec.amp_im) * v))
        return omega + _with_pairs(pieces, dim, K, gen.real)
    rnd = gen.random
    rng = np.random.default_rng(rnd.seed)
    radius = min(rnd.radius, K)
    candidates = [tuple(int(x) for x in k) for k in window(dim, K).modes
                  if 0 < np.abs(k).sum() <= radius and tuple(k) > tuple(-x for x in k)]
    if rnd.count > len(candidates):
        raise ModeOutOfWindow(f"cannot draw {rnd.count} distinct modes with |k| <= {radius}", key="random.count")
    chosen = rng.choice(len(candidates), size=rnd.count, replace=False)
    pieces = []
    for idx in sorted(chosen):
        coeff = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        pieces.append((candidates[idx], rnd.amp * coeff / np.sqrt(2 * dim)))
    return omega + _with_pairs(pieces, dim, K, gen.real)


def write_trajectory_csv(path, result):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for report in result.reports:
            writer.writerow(report.csv_row())


def write_json(path, payload):
    with open(path, "wb") as f:
        f.write(orjson.dumps(payload, option=JSON_OPTS))


def _run_seed(position, seed, cfg, out_dir):
    label = seed.label(position)
    summary = {"seed": label, "source": seed.model_dump(exclude_none=True)}
    try:
        X = generate_field(seed, cfg.basis, cfg.K)
        if seed.shoot_targets:
            perturbation = X.add_constant(-cfg.basis.omega)
            X = shoot_stable(perturbation, cfg, n_targets=seed.shoot_targets)
        result = renorm_iterate(X, cfg)
    except RenormError as exc:
        summary.update(status="ERROR", error=f"{type(exc).__name__}: {exc}", details=exc.details())
        return summary
    write_trajectory_csv(out_dir / f"traj_{label}.csv", result)
    last = result.reports[-1]
    finite = [g for g in result.growth_ratios if np.isfinite(g)]
    summary.update(
        status=result.status,
        steps=len(result.reports),
        initial_norm_prime=norm(X.add_constant(-cfg.basis.omega), prime(cfg.rho)),
        final_norm_prime=last.norm_prime,
        final_nonconstant_norm=last.nonconstant_norm,
        growth_ratio=finite[0] if finite else None,
        growth_ratios=finite,
        error=result.error,
    )
    return summary


def run_experiment(spec, out_dir=None, threads=None, quiet=False):
    """Run every seed of an experiment and write spec.json, traj_<seed>.csv and summary.json.

    Returns 0 when every seed ran, 1 when any seed hit a numerical failure.
    """
    start = time.time()
    out_dir = Path(out_dir or spec.out_dir or os.path.join("results", spec.name))
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "spec.json", spec.model_dump(mode="json"))

    cfg = spec.renorm_config(quiet=True)
    threads = threads or settings.THREADS
    if not quiet:
        print("=" * 60)
        print(f"EXPERIMENT {spec.name}")
        print("=" * 60)
        print(f"Basis: {cfg.basis.name} (p={cfg.basis.power}), K = {cfg.K}, σ = {cfg.params.sigma:.6f}, κ = {cfg.params.kappa:.6f}")
        print(f"Seeds: {len(spec.seeds)}, workers: {threads}")

    jobs = (delayed(_run_seed)(i, seed, cfg, out_dir) for i, seed in enumerate(spec.seeds))
    summaries = Parallel(n_jobs=threads)(tqdm(jobs, total=len(spec.seeds), desc="Seeds", disable=quiet))
    for s in summaries:
        mark = "✗" if s["status"] == "ERROR" else "✓"
        if not quiet:
            tqdm.write(f"{mark} {s['seed']}: {s['status']}")

    write_json(out_dir / "summary.json", {
        "experiment": spec.name,
        "basis": cfg.basis.to_dict(),
        "sigma": cfg.params.sigma,
        "kappa": cfg.params.kappa,
        "seeds": summaries,
    })
    failed = any(s["status"] == "ERROR" for s in summaries)
    if not quiet:
        print(f"{'⚠' if failed else '✓'} Experiment took {time.time() - start:.1f} seconds, reports in {out_dir}")
    return 1 if failed else 0
