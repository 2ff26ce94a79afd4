"""Microscopic integration of the harmonic chain with momentum-exchange noise.

The reference scheme splits each time step into the exact harmonic flow
(diagonal rotation of every Fourier mode) followed by an exact realization of
the conservative noise: every site, in a fresh uniform random order, rotates
the momentum triple ``(p_{z-1}, p_z, p_{z+1})`` about the diagonal axis
``(1,1,1)/sqrt(3)``.  Each rotation preserves the triple's sum and Euclidean
norm, so total momentum and kinetic energy are conserved path by path and the
Hamiltonian drifts only at the level of FFT roundoff.

An explicit Euler-Maruyama discretization of the same SDE is kept as an
independent cross-check; it is weakly first order and conserves nothing
exactly except total momentum.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .lattice import ChainState

__all__ = [
    "SdeConfig",
    "TrajectoryRecord",
    "default_dt",
    "harmonic_flow",
    "noise_sweep",
    "noise_step",
    "step",
    "simulate_ensemble",
]

SCHEMES = ("splitting_exact_rotation", "euler_maruyama")

_SQRT3 = np.sqrt(3.0)
_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT6 = 1.0 / np.sqrt(6.0)


def _sweep_py(p, order, theta):
    n = p.shape[0]
    for i in range(order.shape[0]):
        z = order[i]
        zm = z - 1 if z > 0 else n - 1
        zp = z + 1 if z < n - 1 else 0
        a = p[zm]
        b = p[z]
        c = p[zp]
        # coordinates of the deviation from the triple mean in an orthonormal
        # basis of the plane normal to (1,1,1); the rotation acts there
        c1 = (a - b) * _INV_SQRT2
        c2 = (a + b - 2.0 * c) * _INV_SQRT6
        m = (a + b + c) / 3.0
        phi = -_SQRT3 * theta[i]
        co = np.cos(phi)
        si = np.sin(phi)
        t1 = (co * c1 - si * c2) * _INV_SQRT2
        t2 = (si * c1 + co * c2) * _INV_SQRT6
        p[zm] = m + t1 + t2
        p[z] = m - t1 + t2
        p[zp] = m - 2.0 * t2


try:  # pragma: no cover - exercised implicitly everywhere
    import numba

    _sweep_kernel = numba.njit(cache=True, nogil=True)(_sweep_py)
    _sweep_kernel(np.zeros(4), np.arange(4, dtype=np.int64), np.zeros(4))
except Exception:  # pragma: no cover
    _sweep_kernel = _sweep_py


def noise_sweep(p, dt, rng):
    """One full noise sweep, in place on a momentum array.

    Visits all sites in a fresh uniform random order; each visit rotates its
    triple by an angle drawn from the centered normal law with variance dt/3.
    """
    n = p.shape[0]
    order = rng.permutation(n)
    theta = rng.normal(0.0, np.sqrt(dt / 3.0), n)
    _sweep_kernel(p, order, theta)


def harmonic_flow(state, t):
    """Exact free evolution for a micro time t: per-mode rotation at frequency omega."""
    N = state.N
    _, om_full, _ = state.model.grid_tables(N)
    om = om_full[: N // 2 + 1]
    qh = np.fft.rfft(state.q)
    ph = np.fft.rfft(state.p)
    c = np.cos(om * t)
    s = np.sin(om * t)
    sinc = np.where(om > 0.0, s / np.where(om > 0.0, om, 1.0), t)
    qh2 = c * qh + sinc * ph
    ph2 = c * ph - om * s * qh
    return ChainState(state.model,
                      np.fft.irfft(qh2, N),
                      np.fft.irfft(ph2, N))


def noise_step(state, dt, rng):
    """Apply one noise sweep of intensity dt; positions are untouched."""
    out = ChainState(state.model, state.q, state.p.copy())
    noise_sweep(out.p, dt, rng)
    return out


def default_dt(model, epsilon, gamma):
    """Resolve the step size: a tenth of the fastest period, capped by the noise rate."""
    om_max = float(np.sqrt(np.max(model.alpha_hat(np.linspace(0.0, 0.5, 2049)))))
    dt = 0.1 / om_max
    if epsilon * gamma > 0.0:
        dt = min(dt, 0.01 / (epsilon * gamma))
    return dt


@dataclasses.dataclass
class SdeConfig:
    """Integration parameters for one microscopic run.

    ``horizon`` is macroscopic: trajectories integrate up to micro time
    ``horizon / epsilon``.  A ``dt`` of None is resolved per model by
    :func:`default_dt`.
    """

    epsilon: float
    gamma: float
    horizon: float
    dt: float | None = None
    seed: int = 0
    scheme: str = "splitting_exact_rotation"

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be > 0")
        if self.gamma < 0.0:
            raise ValueError("gamma must be >= 0")
        if self.horizon <= 0.0:
            raise ValueError("horizon must be > 0")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.dt is not None:
            if self.dt <= 0.0:
                raise ValueError("dt must be > 0")
            if self.dt * self.gamma * self.epsilon > 0.1:
                raise ValueError("dt * gamma * epsilon must not exceed 0.1")

    def resolved(self, model):
        if self.dt is not None:
            return self
        return dataclasses.replace(self, dt=default_dt(model, self.epsilon, self.gamma))


@dataclasses.dataclass
class TrajectoryRecord:
    """Observable snapshots along one trajectory plus conservation drift."""

    times: np.ndarray
    observables: dict
    conserved_drift: dict


def _em_step(state, epsilon, gamma, dt, rng):
    model = state.model
    N = state.N
    ah_full, _, _ = model.grid_tables(N)
    ah = ah_full[: N // 2 + 1]
    q, p = state.q, state.p
    force = np.fft.irfft(ah * np.fft.rfft(q), N)
    pm = np.roll(p, 1)
    pp = np.roll(p, -1)
    smooth = 4.0 * p + pm + pp
    beta_p = (np.roll(smooth, 1) + np.roll(smooth, -1) - 2.0 * smooth) / 6.0
    w = rng.standard_normal(N) * np.sqrt(dt)
    eg = epsilon * gamma
    noise = ((pp - pm) * w
             + (pp - np.roll(p, -2)) * np.roll(w, -1)
             + (np.roll(p, 2) - pm) * np.roll(w, 1))
    q2 = q + p * dt
    p2 = p + (-force + eg * beta_p) * dt + np.sqrt(eg / 3.0) * noise
    return ChainState(model, q2, p2)


def step(state, cfg, rng):
    """Advance one micro step of size cfg.dt under the configured scheme."""
    if cfg.dt is None:
        cfg = cfg.resolved(state.model)
    if cfg.scheme == "euler_maruyama":
        return _em_step(state, cfg.epsilon, cfg.gamma, cfg.dt, rng)
    out = harmonic_flow(state, cfg.dt)
    eff = cfg.epsilon * cfg.gamma * cfg.dt
    if eff > 0.0:
        noise_sweep(out.p, eff, rng)
    return out


def _advance(state, cfg, rng, micro_time):
    if micro_time <= 0.0:
        return state
    n_full = int(np.floor(micro_time / cfg.dt + 1e-12))
    rem = micro_time - n_full * cfg.dt
    for _ in range(n_full):
        state = step(state, cfg, rng)
    if rem > 1e-12 * cfg.dt:
        state = step(state, dataclasses.replace(cfg, dt=rem), rng)
    return state


def _run_trajectory(state, cfg, rng, observers, times):
    h0 = state.hamiltonian()
    p0 = state.momentum()
    pscale = max(1.0, float(np.linalg.norm(state.p)))
    hscale = max(abs(h0), 1e-300)
    obs = {name: [] for name in observers}
    drift_h = []
    drift_p = []
    t_prev = 0.0
    for t in times:
        state = _advance(state, cfg, rng, (t - t_prev) / cfg.epsilon)
        t_prev = t
        for name, fn in observers.items():
            obs[name].append(fn(state))
        drift_h.append(abs(state.hamiltonian() - h0) / hscale)
        drift_p.append(abs(state.momentum() - p0) / pscale)
    observables = {name: np.array(vals) for name, vals in obs.items()}
    drift = {"H": np.array(drift_h), "P": np.array(drift_p)}
    return TrajectoryRecord(np.array(times, dtype=float), observables, drift)


def simulate_ensemble(initial_sampler, cfg, M, observers=None, times=None, threads=1):
    """Integrate M independent trajectories and record observers at macro times.

    Parameters
    ----------
    initial_sampler : callable
        ``rng -> ChainState``; called once per trajectory with that
        trajectory's own generator.
    cfg : SdeConfig
    M : int
        Ensemble size.  Trajectory i draws from the i-th child of
        ``SeedSequence(cfg.seed)``, so members are independent and the whole
        ensemble is reproducible bit for bit; results do not depend on
        ``threads``.
    observers : dict[str, callable] | None
        Each maps a state to a scalar or array snapshot.
    times : sequence | None
        Macroscopic sample times (non-decreasing, >= 0); defaults to
        ``[cfg.horizon]``.
    """
    observers = observers or {}
    if times is None:
        times = [cfg.horizon]
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) == 0:
        raise ValueError("times must be a non-empty 1-d sequence")
    if np.any(np.diff(times) < 0.0) or times[0] < 0.0:
        raise ValueError("times must be non-decreasing and non-negative")
    if np.any(times > cfg.horizon + 1e-12):
        raise ValueError("times must not exceed the horizon")

    children = np.random.SeedSequence(cfg.seed).spawn(M)
    records = [None] * M

    def work(i):
        rng = np.random.default_rng(children[i])
        state = initial_sampler(rng)
        records[i] = _run_trajectory(state, cfg.resolved(state.model), rng,
                                     observers, times)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, range(M)))
    else:
        for i in range(M):
            work(i)
    return records
