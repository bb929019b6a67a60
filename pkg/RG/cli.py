"""Command-line entry point: python -m RG <command> ..."""

import functools
import logging
import sys
from pathlib import Path

import click
import numpy as np
import orjson
from pydantic import ValidationError

from RG import settings
from RG.errors import ConfigError, RenormError
from RG.experiments import (
    JSON_OPTS,
    RunConfig,
    load_experiment,
    load_run_config,
    run_experiment,
    write_json,
    write_trajectory_csv,
)
from RG.flow_verify import conjugacy_residual, integrate, winding_ratio
from RG.fourier_core import FourierField
from RG.homotopy_eliminator import eliminate
from RG.kt_basis import choose_params, load_basis
from RG.renorm_operator import renorm_iterate, renorm_step_detailed
from RG.spectral_analysis import (
    build_dr_matrix,
    constant_block_eigen,
    eigen_spectrum,
    finite_difference_check,
    nilpotency_check,
)

logger = logging.getLogger(__name__)

EXIT_NUMERIC = 1
EXIT_CONFIG = 2


def _error_payload(exc):
    payload = {"error": type(exc).__name__, "message": str(exc), "details": {}}
    if isinstance(exc, ValidationError):
        errors = [{"loc": ".".join(str(x) for x in e["loc"]), "msg": e["msg"]} for e in exc.errors()]
        payload["details"] = {"key": errors[0]["loc"] if errors else None, "errors": errors}
    elif hasattr(exc, "details"):
        payload["details"] = exc.details()
    return payload


def handled(func):
    """Map library failures onto exit codes with a JSON error object on stdout."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except RenormError as exc:
            click.echo(orjson.dumps(_error_payload(exc), option=JSON_OPTS).decode())
            sys.exit(EXIT_NUMERIC)
        except (ConfigError, ValidationError, ValueError, FileNotFoundError, orjson.JSONDecodeError) as exc:
            click.echo(orjson.dumps(_error_payload(exc), option=JSON_OPTS).decode())
            sys.exit(EXIT_CONFIG)

    return wrapper


def _emit(payload, out):
    if out:
        write_json(out, payload)
        logger.info(f"✓ wrote {out}")
    else:
        click.echo(orjson.dumps(payload, option=JSON_OPTS).decode())


def _sigma(value):
    return None if value in (None, "auto") else float(value)


def _load_field(path):
    try:
        return FourierField.from_json(Path(path).read_bytes())
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path} is not a field file: missing or malformed {exc}", key="input") from exc


def _run_config(config, basis, power, K, rho, rho_prime, sigma, kappa, **extra):
    """Config file keys, overridden by every flag given on the command line."""
    overrides = dict(basis=basis, power=power, K=K, rho=rho, rho_prime=rho_prime, kappa=kappa, **extra)
    run_cfg = load_run_config(config, overrides)
    if sigma is not None:
        run_cfg = RunConfig.model_validate({**run_cfg.model_dump(), "sigma": _sigma(sigma)})
    return run_cfg


def _input_field(path, run_cfg):
    if path:
        return _load_field(path)
    b = load_basis(run_cfg.basis, run_cfg.power)
    return FourierField.constant(b.omega, run_cfg.K, real=True)


def basis_options(func):
    options = [
        click.option("--config", default=None, help="JSON or YAML config (experiment files work too); flags override its keys"),
        click.option("--basis", default=None, help="golden, plastic or file:PATH  [default: golden]"),
        click.option("--power", default=None, type=int, help="use T^p instead of T  [default: 1]"),
        click.option("--K", "K", default=None, type=int, help=f"truncation radius; an input field's own K wins  [default: {settings.DEFAULT_K}]"),
        click.option("--rho", default=None, type=float, help=f"[default: {settings.DEFAULT_RHO}]"),
        click.option("--rho-prime", default=None, type=float, help=f"[default: {settings.DEFAULT_RHO_PRIME}]"),
        click.option("--sigma", default=None, help="resonance width or 'auto'  [default: auto]"),
        click.option("--kappa", default=None, type=float, help="cone factor (only with an explicit sigma)"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


@click.group()
@click.option("--log-level", default=settings.LOG_LEVEL, show_default=True)
def cli(log_level):
    """Renormalisation of vector fields on the torus near a Koch-type frequency."""
    logging.basicConfig(level=getattr(logging, log_level.upper(), logging.INFO))


@cli.command()
@basis_options
@handled
def basis(config, basis, power, K, rho, rho_prime, sigma, kappa):
    """Print the certified basis and the chosen resonance parameters."""
    run_cfg = _run_config(config, basis, power, K, rho, rho_prime, sigma, kappa)
    b = load_basis(run_cfg.basis, run_cfg.power)
    params = choose_params(b, run_cfg.rho, run_cfg.rho_prime, run_cfg.K) if run_cfg.sigma is None else None
    inv_norm, inv_ok = b.inverse_norm_check()
    beta, C = b.diophantine_fit(run_cfg.K)
    payload = b.to_dict()
    payload.update(
        sigma=params.sigma if params else run_cfg.sigma,
        kappa=params.kappa if params else run_cfg.kappa,
        inverse_norm=inv_norm,
        inverse_norm_ok=inv_ok,
        diophantine_beta=beta,
        diophantine_C=C,
    )
    _emit(payload, None)


@cli.command("eliminate")
@click.option("--input", "input_path", default=None, help="field JSON (default: ω)")
@click.option("--out", default=None)
@basis_options
@handled
def eliminate_cmd(input_path, out, config, basis, power, K, rho, rho_prime, sigma, kappa):
    """Remove the far-from-resonance modes of a field."""
    run_cfg = _run_config(config, basis, power, K, rho, rho_prime, sigma, kappa)
    X = _input_field(input_path, run_cfg)
    cfg = run_cfg.renorm_config(K=X.K)
    result = eliminate(X, cfg.params, cfg.elim)
    _emit(result.to_dict(), out)


@cli.command()
@click.option("--input", "input_path", default=None, help="field JSON (default: ω)")
@click.option("--iters", default=None, type=int, help="[default: 10]")
@click.option("--out", default=None, help="trajectory CSV")
@click.option("--quiet", is_flag=True)
@basis_options
@handled
def iterate(input_path, iters, out, quiet, config, basis, power, K, rho, rho_prime, sigma, kappa):
    """Iterate R and write the trajectory CSV."""
    run_cfg = _run_config(config, basis, power, K, rho, rho_prime, sigma, kappa, iters=iters)
    X = _input_field(input_path, run_cfg)
    cfg = run_cfg.renorm_config(quiet=quiet, K=X.K)
    result = renorm_iterate(X, cfg)
    if out:
        write_trajectory_csv(out, result)
    click.echo(orjson.dumps({"status": result.status, "steps": len(result.reports), "error": result.error}).decode())


@cli.command()
@click.option("--fd-dirs", default=20, show_default=True, type=int, help="finite-difference directions (0 skips)")
@click.option("--strict/--no-strict", default=True, show_default=True)
@click.option("--out", default=None)
@basis_options
@handled
def spectrum(fd_dirs, strict, out, config, basis, power, K, rho, rho_prime, sigma, kappa):
    """Spectrum of DR(ω) with nilpotency and finite-difference diagnostics."""
    run_cfg = _run_config(config, basis, power, K, rho, rho_prime, sigma, kappa)
    cfg = run_cfg.renorm_config()
    K = cfg.K
    L = build_dr_matrix(cfg.basis, cfg.params, K, strict=strict)
    nil = nilpotency_check(L, rho=cfg.rho)
    eigs = eigen_spectrum(L, nilpotency=nil)
    vals, vecs = constant_block_eigen(L)
    payload = {
        "basis": cfg.basis.name,
        "K": K,
        "sigma": cfg.params.sigma,
        "kappa": cfg.params.kappa,
        "unstable": [[z.real, z.imag] for z in eigs if abs(z) > 1],
        "constant_block_eigenvalues": [[complex(z).real, complex(z).imag] for z in vals],
        "constant_block_eigenvectors_re": np.real(vecs).tolist(),
        "constant_block_eigenvectors_im": np.imag(vecs).tolist(),
        "zero_eigenvalues": sum(1 for z in eigs if z == 0),
        "nilpotency": nil.model_dump(),
        "dropped_columns": L.dropped,
    }
    if fd_dirs > 0:
        payload["finite_difference"] = finite_difference_check(L, cfg, n_dirs=fd_dirs).model_dump()
    _emit(payload, out)


@cli.command()
@click.option("--input", "input_path", default=None, help="field JSON (default: ω)")
@click.option("--theta0", default=None, help="comma-separated initial angle (default: origin)")
@click.option("--t", "t_end", default=1000.0, show_default=True, type=float)
@click.option("--dt", default=0.01, show_default=True, type=float)
@click.option("--out", default=None)
@basis_options
@handled
def winding(input_path, theta0, t_end, dt, out, config, basis, power, K, rho, rho_prime, sigma, kappa):
    """Winding ratio of one orbit."""
    run_cfg = _run_config(config, basis, power, K, rho, rho_prime, sigma, kappa)
    X = _input_field(input_path, run_cfg)
    start = np.zeros(X.dim) if theta0 is None else np.array([float(x) for x in theta0.split(",")])
    estimate = winding_ratio(integrate(X, start, t_end, dt, quiet=False))
    _emit({"w": estimate.w, "confident": estimate.confident, "status": estimate.status}, out)


@cli.command()
@click.option("--input", "input_path", default=None, help="field JSON (default: ω)")
@click.option("--grid", "grid_n", default=32, show_default=True, type=int)
@click.option("--out", default=None)
@basis_options
@handled
def conjugacy(input_path, grid_n, out, config, basis, power, K, rho, rho_prime, sigma, kappa):
    """Conjugacy residual of one renormalisation step."""
    run_cfg = _run_config(config, basis, power, K, rho, rho_prime, sigma, kappa)
    X = _input_field(input_path, run_cfg)
    cfg = run_cfg.renorm_config(K=X.K)
    outcome = renorm_step_detailed(X, cfg)
    _emit({"residual": conjugacy_residual(X, outcome, cfg.basis, grid_n=grid_n)}, out)


@cli.command()
@click.argument("experiment")
@click.option("--out-dir", default=None)
@click.option("--threads", default=None, type=int)
@click.option("--iters", default=None, type=int)
@click.option("--K", "K", default=None, type=int)
@click.option("--quiet", is_flag=True)
@handled
def run(experiment, out_dir, threads, iters, K, quiet):
    """Run an experiment file (JSON or YAML)."""
    spec = load_experiment(experiment, overrides={"iters": iters, "K": K})
    code = run_experiment(spec, out_dir=out_dir, threads=threads, quiet=quiet)
    sys.exit(code)


if __name__ == "__main__":
    cli()
