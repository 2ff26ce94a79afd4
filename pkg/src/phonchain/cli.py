"""Batch front-end: config-driven experiments with CSV artifacts and a manifest.

Run configurations are JSON files.  Every field except ``experiment`` and
``model`` has a default; unknown keys are rejected so that a typo in a physics
parameter cannot silently fall back to a default.  Each run writes its
artifacts plus a ``manifest.json`` (config echo, resolved defaults, version,
wall clock, per-check pass/fail) into the output directory, guarded by a
``.lock`` file.  Environment-variable overrides are disabled by design; the
only overrides are the explicit ``--seed``, ``--out`` and ``--threads`` flags.

Exit status: 0 when every built-in check passes, 1 when one fails,
2 for configuration errors, 3 for model assumption violations.
"""

from __future__ import annotations

import json
import os
import time

import click
import numpy as np

from . import __version__
from .dynamics import SdeConfig, simulate_ensemble
from .kinetic import (
    CollisionKernel1D,
    CollisionKernelDD,
    apply_collision,
    solve_homogeneous,
    simulate_phonon,
    uniform_k_law,
)
from .lattice import AssumptionViolation, build_coupling
from .spectral import GaussianFieldSpec, sample_homogeneous_gaussian
from .transport import (
    Divergent,
    green_kubo_kappa,
    kappa0,
    kinetic_current_correlation,
    micro_current_correlation,
    suggested_fit_window,
    superdiffusion_exponent,
)


class ConfigError(Exception):
    """Malformed run configuration; the message names the offending field."""


class ModelError(Exception):
    """A model assumption failed while building or running the experiment."""


_DEFAULTS = {
    "epsilon": 0.1,
    "gamma": 1.0,
    "T": 1.0,
    "N": 256,
    "M": 100,
    "dt": None,
    "times": [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0],
    "seed": 0,
    "out": None,
    "threads": 0,
    "walkers": 20000,
    "window": None,
}

_REQUIRED = ("experiment", "model")


def _require_number(cfg, key, kind=float, positive=False, nonnegative=False,
                    optional=False):
    val = cfg[key]
    if val is None:
        if optional:
            return None
        raise ConfigError(f"field '{key}' must be set")
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"field '{key}' must be a number")
    if kind is int and not isinstance(val, int):
        raise ConfigError(f"field '{key}' must be an integer")
    val = kind(val)
    if positive and val <= 0:
        raise ConfigError(f"field '{key}' must be > 0")
    if nonnegative and val < 0:
        raise ConfigError(f"field '{key}' must be >= 0")
    return val


def validate_config(raw):
    """Fill defaults and type-check a raw config dict.

    Returns the resolved config.  Raises :class:`ConfigError` with the field
    name on any schema violation.
    """
    if not isinstance(raw, dict):
        raise ConfigError("run config must be a JSON object")
    unknown = sorted(set(raw) - set(_REQUIRED) - set(_DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown field '{unknown[0]}'")
    for key in _REQUIRED:
        if key not in raw:
            raise ConfigError(f"missing required field '{key}'")
    cfg = dict(_DEFAULTS)
    cfg.update(raw)

    if cfg["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"field 'experiment' must be one of "
                          f"{sorted(EXPERIMENTS)}, got {cfg['experiment']!r}")
    if not isinstance(cfg["model"], dict):
        raise ConfigError("field 'model' must be a coupling spec object")

    cfg["epsilon"] = _require_number(cfg, "epsilon", positive=True)
    cfg["gamma"] = _require_number(cfg, "gamma", nonnegative=True)
    cfg["T"] = _require_number(cfg, "T", positive=True)
    cfg["N"] = _require_number(cfg, "N", kind=int, positive=True)
    cfg["M"] = _require_number(cfg, "M", kind=int, positive=True)
    cfg["dt"] = _require_number(cfg, "dt", positive=True, optional=True)
    cfg["seed"] = _require_number(cfg, "seed", kind=int, nonnegative=True)
    cfg["threads"] = _require_number(cfg, "threads", kind=int, nonnegative=True)
    cfg["walkers"] = _require_number(cfg, "walkers", kind=int, positive=True)

    times = cfg["times"]
    if (not isinstance(times, (list, tuple)) or len(times) == 0
            or any(isinstance(t, bool) or not isinstance(t, (int, float))
                   for t in times)):
        raise ConfigError("field 'times' must be a non-empty list of numbers")
    times = [float(t) for t in times]
    if any(t < 0 for t in times) or any(b <= a for a, b in zip(times, times[1:])):
        raise ConfigError("field 'times' must be increasing and >= 0")
    cfg["times"] = times

    window = cfg["window"]
    if window is not None:
        if (not isinstance(window, (list, tuple)) or len(window) != 2
                or any(isinstance(w, bool) or not isinstance(w, (int, float))
                       for w in window)):
            raise ConfigError("field 'window' must be a [t_min, t_max] pair")
        window = (float(window[0]), float(window[1]))
        if not 0.0 < window[0] < window[1]:
            raise ConfigError("field 'window' must satisfy 0 < t_min < t_max")
        cfg["window"] = list(window)

    if cfg["out"] is not None and not isinstance(cfg["out"], str):
        raise ConfigError("field 'out' must be a path string")
    return cfg


def _build_model(spec):
    try:
        return build_coupling(spec)
    except AssumptionViolation as err:
        raise ModelError(str(err)) from err
    except (ValueError, TypeError) as err:
        raise ConfigError(f"field 'model': {err}") from err


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return str(float(value))
    return str(value)


def _write_csv(path, header, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _check(name, error, tol):
    return {"name": name, "max_error": float(error), "tolerance": float(tol),
            "pass": bool(error <= tol)}


# --- experiments -----------------------------------------------------------


def _run_kernel_checks(cfg, model, out, resolved):
    k = (np.arange(256) + 0.5) / 256
    kp = (np.arange(1024) + 0.5) / 1024
    R = CollisionKernel1D.R(k[:, None], kp[None, :])

    row = np.abs(R.mean(axis=1) - CollisionKernel1D.phi(k)).max()
    sym = np.abs(CollisionKernel1D.R(kp[None, :], k[:, None]) - R).max()
    env = (R - CollisionKernel1D.envelope(k)[:, None]).max()
    fine = np.arange(4096) / 4096
    f_even = np.exp(np.cos(2 * np.pi * fine))
    f_odd = np.sin(2 * np.pi * fine) * (1.0 + 0.5 * np.cos(2 * np.pi * fine))
    cons = abs(apply_collision(f_even).mean())
    eigen = np.abs(apply_collision(f_odd)
                   + CollisionKernel1D.phi(fine) * f_odd).max()
    corner = np.array([0.5, 0.5])
    kdd = CollisionKernelDD(2)
    dd_R = abs(kdd.R(corner, corner) - 32.0)
    dd_phi = abs(kdd.phi(corner) - 16.0)

    checks = [
        _check("row_integral_equals_phi", row, 1e-12),
        _check("kernel_symmetry", sym, 1e-12),
        _check("envelope_dominates_kernel", max(env, 0.0), 0.0),
        _check("collision_conserves_mean", cons, 1e-12),
        _check("odd_functions_relax_at_rate_phi", eigen, 1e-12),
        _check("dd_kernel_corner_value", dd_R, 1e-12),
        _check("dd_rate_corner_value", dd_phi, 1e-12),
    ]
    _write_csv(os.path.join(out, "kernel_checks.csv"),
               ["identity", "max_error", "tolerance", "pass"],
               [(c["name"], c["max_error"], c["tolerance"], int(c["pass"]))
                for c in checks])
    return checks


def _run_spectrum_relax(cfg, model, out, resolved):
    N, M = cfg["N"], cfg["M"]
    grid = np.arange(N) / N
    W0 = 1.0 + 0.8 * np.cos(2.0 * np.pi * grid)
    spec = GaussianFieldSpec(covariance_W=lambda k: 1.0 + 0.8 * np.cos(2.0 * np.pi * k))
    times = [t for t in cfg["times"] if t > 0.0] or [1.0]
    sde = SdeConfig(epsilon=cfg["epsilon"], gamma=cfg["gamma"],
                    horizon=times[-1], dt=cfg["dt"], seed=cfg["seed"])
    resolved["dt"] = float(sde.resolved(model).dt)

    def spectrum(state):
        return np.abs(state.psi_hat()) ** 2 / N

    records = simulate_ensemble(
        lambda rng: sample_homogeneous_gaussian(spec, model, N, rng),
        sde, M, observers={"spec": spectrum}, times=times,
        threads=resolved["threads"])
    stack = np.array([rec.observables["spec"] for rec in records])
    micro = stack.mean(axis=0)
    stderr = stack.std(axis=0, ddof=1) / np.sqrt(M)

    sol = solve_homogeneous(W0, cfg["gamma"], times[-1], sample_times=times)

    rows_e, rows_b, checks = [], [], []
    bins = 64 if N % 64 == 0 else N
    for i, t in enumerate(times):
        rows_e += [(t, grid[j], micro[i, j], stderr[i, j]) for j in range(N)]
        rows_b += [(t, grid[j], sol.W[i, j]) for j in range(N)]
        micro_b = micro[i].reshape(bins, -1).mean(axis=1)
        kin_b = sol.W[i].reshape(bins, -1).mean(axis=1)
        l1 = np.abs(micro_b - kin_b).mean()
        checks.append(_check(f"binned_l1_distance_t={_fmt(t)}", l1, 0.25))
    _write_csv(os.path.join(out, "E_eps_t.csv"),
               ["time", "k", "value", "stderr"], rows_e)
    _write_csv(os.path.join(out, "boltzmann_t.csv"),
               ["time", "k", "value"], rows_b)
    return checks


def _run_current_corr(cfg, model, out, resolved):
    tau = np.asarray(cfg["times"], dtype=float)
    if tau[0] != 0.0 or len(tau) < 2:
        raise ConfigError("field 'times' must start at 0 for current_corr")
    sde = SdeConfig(epsilon=cfg["epsilon"], gamma=cfg["gamma"],
                    horizon=2.0 * tau[-1] if tau[-1] > 0 else 1.0,
                    dt=cfg["dt"], seed=cfg["seed"])
    resolved["dt"] = float(sde.resolved(model).dt)
    resolved["origins"] = [float(t) for t in tau]
    est = micro_current_correlation(model, cfg["T"], sde, cfg["N"], cfg["M"],
                                    tau, origins=tuple(tau),
                                    threads=resolved["threads"])
    kin = kinetic_current_correlation(model, cfg["T"], cfg["gamma"], tau)
    _write_csv(os.path.join(out, "current_corr.csv"),
               ["time", "micro", "stderr", "kinetic"],
               [(tau[i], est.values[i], est.stderr[i], kin.values[i])
                for i in range(len(tau))])
    dev = np.abs(est.values - kin.values)
    band = 0.10 * np.abs(kin.values) + 3.0 * est.stderr
    worst = (dev - band).max()
    return [_check("micro_within_band_of_kinetic", max(worst, 0.0), 0.0)]


def _run_kappa(cfg, model, out, resolved):
    value = kappa0(model, cfg["gamma"])
    if isinstance(value, Divergent):
        rows = [("cutoff_scaling", value.cutoff_scaling)]
        rows += [(f"truncated_at_{_fmt(c)}", v)
                 for c, v in zip(value.cutoffs, value.truncated_values)]
        checks = [_check("cutoff_scaling_minus_one",
                         abs(value.cutoff_scaling + 1.0), 0.1)]
    else:
        gk = green_kubo_kappa(model, cfg["T"], cfg["gamma"])
        rel = abs(gk - value) / value
        rows = [("kappa0", value), ("green_kubo", gk), ("rel_difference", rel)]
        checks = [_check("green_kubo_equals_kappa0", rel, 1e-6)]
    _write_csv(os.path.join(out, "kappa.csv"), ["quantity", "value"], rows)
    return checks


def _run_superdiffusion(cfg, model, out, resolved):
    if cfg["window"] is not None:
        window = tuple(cfg["window"])
    elif cfg["gamma"] == 0.0:
        window = (10.0, 1000.0)
    else:
        window = suggested_fit_window(model, cfg["gamma"])
    resolved["window"] = [float(window[0]), float(window[1])]
    fit = superdiffusion_exponent(model, cfg["gamma"], window, cfg["walkers"],
                                  seed=cfg["seed"], bootstrap=32)
    _write_csv(os.path.join(out, "spread.csv"),
               ["time", "median_abs_displacement"],
               list(zip(fit.abscissae, fit.ordinates)))
    resolved["exponent"] = float(fit.exponent)
    resolved["exponent_ci"] = [float(fit.ci_low), float(fit.ci_high)]
    if cfg["gamma"] == 0.0:
        target, tol = 1.0, 0.01
    elif model.kind == "unpinned":
        target, tol = 2.0 / 3.0, 0.1
    else:
        target, tol = 0.5, 0.1
    return [_check(f"exponent_near_{_fmt(round(target, 4))}",
                   abs(fit.exponent - target), tol)]


def _run_wigner_transport(cfg, model, out, resolved):
    times = [t for t in cfg["times"] if t > 0.0] or [1.0]
    rng = np.random.default_rng(cfg["seed"])
    ens = simulate_phonon(cfg["walkers"], uniform_k_law, model, cfg["gamma"],
                          times[-1], rng=rng, sample_times=times)
    span = max(np.abs(ens.X).max(), 1e-12)
    edges = np.linspace(-span, span, 65)
    centers = 0.5 * (edges[:-1] + edges[1:])
    rows_p, rows_s = [], []
    rms = []
    for i, t in enumerate(times):
        hist, _ = np.histogram(ens.X[i], bins=edges, density=True)
        rows_p += [(t, centers[j], hist[j]) for j in range(64)]
        rms.append(float(np.sqrt(np.mean(ens.X[i] ** 2))))
        rows_s.append((t, np.median(np.abs(ens.X[i])), rms[-1]))
    _write_csv(os.path.join(out, "profile_t.csv"),
               ["time", "x", "density"], rows_p)
    _write_csv(os.path.join(out, "spread_t.csv"),
               ["time", "median_abs_displacement", "rms_displacement"], rows_s)

    growth = 0.0 if len(rms) < 2 or all(b > a for a, b in zip(rms, rms[1:])) \
        else 1.0
    final_k = np.sort(ens.K[-1] % 1.0)
    ks = np.abs(final_k - (np.arange(len(final_k)) + 0.5) / len(final_k)).max()
    return [
        _check("rms_spread_increases", growth, 0.0),
        _check("k_marginal_stays_uniform", ks,
               2.2 / np.sqrt(cfg["walkers"])),
    ]


EXPERIMENTS = {
    "current_corr": ("Microscopic total-current correlation against the "
                     "kinetic quadrature", _run_current_corr),
    "kappa": ("Thermal conductivity: collision-rate formula against the "
              "time-integral route, or its divergence rate", _run_kappa),
    "kernel_checks": ("Deterministic collision-kernel identity suite",
                      _run_kernel_checks),
    "spectrum_relax": ("Ensemble energy spectrum relaxation against the "
                       "space-homogeneous kinetic solution", _run_spectrum_relax),
    "superdiffusion": ("Jump-process displacement exponent over a fit window",
                       _run_superdiffusion),
    "wigner_transport": ("Phase-space transport of an initially localized "
                         "walker cloud", _run_wigner_transport),
}


# --- driver ----------------------------------------------------------------


def run(config_path, seed=None, out=None, threads=None):
    """Execute one experiment; returns (exit status, artifact directory)."""
    try:
        with open(config_path) as fh:
            raw = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from err

    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if out is not None:
        overrides["out"] = out
    if threads is not None:
        overrides["threads"] = threads
    merged = dict(raw) if isinstance(raw, dict) else raw
    if isinstance(merged, dict):
        merged.update(overrides)
    cfg = validate_config(merged)
    model = _build_model(cfg["model"])

    out_dir = cfg["out"] or os.path.join("runs", cfg["experiment"])
    os.makedirs(out_dir, exist_ok=True)
    lock_path = os.path.join(out_dir, ".lock")
    try:
        lock_fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"output directory {out_dir!r} is locked "
                          f"({lock_path} exists)") from None
    start = time.monotonic()
    try:
        os.write(lock_fd, str(os.getpid()).encode())
        resolved = {key: cfg[key] for key in _DEFAULTS}
        resolved["out"] = out_dir
        resolved["threads"] = cfg["threads"] or (os.cpu_count() or 1)
        try:
            checks = EXPERIMENTS[cfg["experiment"]][1](cfg, model, out_dir,
                                                       resolved)
        except AssumptionViolation as err:
            raise ModelError(str(err)) from err
        manifest = {
            "experiment": cfg["experiment"],
            "config": raw,
            "resolved": resolved,
            "version": f"phonchain-{__version__}",
            "wall_clock_seconds": time.monotonic() - start,
            "checks": checks,
            "pass": all(c["pass"] for c in checks),
        }
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")
    finally:
        os.close(lock_fd)
        os.unlink(lock_path)
    return (0 if manifest["pass"] else 1), out_dir


def list_experiments():
    """Experiment ids with one-line descriptions, lexicographic."""
    return [(name, EXPERIMENTS[name][0]) for name in sorted(EXPERIMENTS)]


@click.group()
def main():
    """Harmonic-chain transport experiments."""


@main.command("run")
@click.argument("config", type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", type=click.Path(), default=None,
              help="Override the output directory.")
@click.option("--threads", type=int, default=None,
              help="Override the parallelism degree (0 = all cores).")
def run_command(config, seed, out, threads):
    """Run the experiment described by CONFIG (a JSON file)."""
    try:
        status, out_dir = run(config, seed=seed, out=out, threads=threads)
    except ConfigError as err:
        click.echo(f"config error: {err}", err=True)
        raise SystemExit(2)
    except ModelError as err:
        click.echo(f"model error: {err}", err=True)
        raise SystemExit(3)
    click.echo(f"artifacts written to {out_dir}")
    if status != 0:
        click.echo("one or more built-in checks FAILED", err=True)
    raise SystemExit(status)


@main.command("list")
def list_command():
    """List available experiments."""
    for name, desc in list_experiments():
        click.echo(f"{name:18s} {desc}")


if __name__ == "__main__":
    main()
