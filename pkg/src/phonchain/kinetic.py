"""Phonon Boltzmann layer: collision kernels, homogeneous solvers, jump processes.

The momentum-exchange noise scatters a phonon at wavenumber k to k' at rate
``gamma R(k, k') dk'`` with a symmetric kernel R that is a trigonometric
polynomial; its k'-integral is the total scattering rate ``gamma phi(k)``.
Because R depends on k' only through ``sin^2(pi k')`` and ``sin^2(2 pi k')``,
the gain term of the collision operator has rank two: every solver here
exploits that, and the homogeneous equation closes on two moments.

Three independent routes solve the homogeneous relaxation problem: a
method-of-lines integrator (RK4 on the full grid), a Volterra/Duhamel
reduction that propagates the loss term exactly and discretizes only the
two-moment gain history, and a direct jump-process Monte Carlo.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .spectral import SpectralFunction

__all__ = [
    "NonPositiveInitial",
    "CollisionKernel1D",
    "CollisionKernelDD",
    "DDCouplingModel",
    "PhononWalker",
    "PhononEnsemble",
    "HomogeneousSolution",
    "apply_collision",
    "solve_homogeneous",
    "simulate_phonon",
    "solve_inhomogeneous_mc",
    "uniform_k_law",
    "density_k_law",
    "sample_from_density",
]


class NonPositiveInitial(ValueError):
    """Initial phonon data must be pointwise non-negative."""


class CollisionKernel1D:
    """Closed forms for the one-dimensional scattering kernel.

    ``R(k, k')`` is symmetric, non-negative, vanishes when either argument is
    an integer, and integrates over k' to ``phi(k) = -beta_hat(k)``.
    """

    PHI_MAX = 1.5          # attained where sin^2(pi k) = 3/4
    R_SUP = 8.0 / 3.0      # attained at (k, k') = (1/4, 1/2)

    @staticmethod
    def R(k, kp):
        s2k = np.sin(2.0 * np.pi * np.asarray(k)) ** 2
        s1k = np.sin(np.pi * np.asarray(k)) ** 2
        s2p = np.sin(2.0 * np.pi * np.asarray(kp)) ** 2
        s1p = np.sin(np.pi * np.asarray(kp)) ** 2
        return (4.0 / 3.0) * (2.0 * s2k * s1p + 2.0 * s2p * s1k - s2k * s2p)

    @staticmethod
    def beta_hat(k):
        s = np.sin(np.pi * np.asarray(k)) ** 2
        return -(4.0 / 3.0) * s * (3.0 - 2.0 * s)

    @staticmethod
    def phi(k):
        return -CollisionKernel1D.beta_hat(k)

    @staticmethod
    def envelope(k):
        """sup over k' of R(k, .), exact: the k'-section is quadratic in sin^2(pi k').

        Writing a = sin^2(2 pi k), s = sin^2(pi k), the section is
        g(x) = 2 a x + 4 (2s - a) x (1 - x) on x in [0, 1]; concave sections
        peak at the clipped vertex, convex ones at x = 1.
        """
        a = np.sin(2.0 * np.pi * np.asarray(k, dtype=float)) ** 2
        s = np.sin(np.pi * np.asarray(k, dtype=float)) ** 2
        c = 2.0 * s - a
        with np.errstate(divide="ignore", invalid="ignore"):
            xv = np.clip((2.0 * a + 4.0 * c) / (8.0 * c), 0.0, 1.0)
        xv = np.where(c > 0.0, xv, 1.0)
        g = 2.0 * a * xv + 4.0 * c * xv * (1.0 - xv)
        g = np.maximum(g, 2.0 * a)
        return (4.0 / 3.0) * g * (1.0 + 1e-12)


class CollisionKernelDD:
    """Kernel and rates in dimension d >= 2 with polarization exchange.

    A phonon of polarization i scatters to polarization j != i with density
    ``nu(k, i -> j, dk') = R(k, k') / (d - 1) dk'``; the total rate is
    ``phi(k) = 8 sum_l sin^2(pi k_l)``, independent of polarization.
    """

    def __init__(self, d):
        if d < 2:
            raise ValueError("CollisionKernelDD needs d >= 2")
        self.d = d

    def R(self, k, kp):
        k = np.asarray(k, dtype=float)
        kp = np.asarray(kp, dtype=float)
        return 16.0 * np.sum(np.sin(np.pi * k) ** 2 * np.sin(np.pi * kp) ** 2, axis=-1)

    def phi(self, k):
        k = np.asarray(k, dtype=float)
        return 8.0 * np.sum(np.sin(np.pi * k) ** 2, axis=-1)

    def nu(self, k, i, j, kp):
        """Rate density for the polarization channel i -> j."""
        i = np.asarray(i)
        j = np.asarray(j)
        return np.where(i == j, 0.0, self.R(k, kp) / (self.d - 1))


@dataclasses.dataclass
class DDCouplingModel:
    """Separable nearest-neighbor dispersion in d dimensions (for flight velocities)."""

    omega0_sq: float
    alpha1: float
    d: int

    def omega(self, k):
        k = np.asarray(k, dtype=float)
        ah = self.omega0_sq + self.alpha1 * np.sum(1.0 - np.cos(2.0 * np.pi * k), axis=-1)
        return np.sqrt(np.maximum(ah, 0.0))

    def velocity(self, k):
        """Group velocity grad omega / (2 pi), componentwise."""
        k = np.asarray(k, dtype=float)
        om = self.omega(k)[..., None]
        grad = self.alpha1 * np.pi * np.sin(2.0 * np.pi * k)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = grad / (2.0 * np.pi * om)
        return np.where(om > 0.0, v, 0.0)


def _as_values(f):
    if isinstance(f, SpectralFunction):
        return np.asarray(f.values, dtype=float), f.grid
    vals = np.asarray(f, dtype=float)
    return vals, np.arange(len(vals)) / len(vals)


def _gain_basis(N):
    k = np.arange(N) / N
    return np.sin(np.pi * k) ** 2, np.sin(2.0 * np.pi * k) ** 2


def _gain(values, u, v):
    ma = np.mean(u * values)
    mb = np.mean(v * values)
    return (4.0 / 3.0) * ((2.0 * ma - mb) * v + 2.0 * mb * u)


def apply_collision(f):
    """Collision operator C f = gain - phi f on the Fourier grid.

    The gain is evaluated through the exact rank-2 decomposition, so the only
    quadrature involved is the two grid-mean moments; grid conservation
    ``mean(C f) = 0`` holds to roundoff for any grid with N >= 4.
    """
    values, grid = _as_values(f)
    N = len(values)
    u, v = _gain_basis(N)
    out = _gain(values, u, v) - CollisionKernel1D.phi(grid) * values
    if isinstance(f, SpectralFunction):
        return SpectralFunction(grid, out)
    return out


@dataclasses.dataclass
class HomogeneousSolution:
    """Relaxation of a homogeneous phonon field: W(t_i, k_j)."""

    times: np.ndarray
    grid: np.ndarray
    W: np.ndarray
    method: str


def _segment_counts(sample_times, t0, dt):
    prev = t0
    for t in sample_times:
        n = max(1, int(np.ceil((t - prev) / dt - 1e-9))) if t > prev else 0
        yield t, n, (t - prev) / n if n else 0.0
        prev = t


def _solve_lines(W0, gamma, sample_times, dt):
    N = len(W0)
    u, v = _gain_basis(N)
    phi = CollisionKernel1D.phi(np.arange(N) / N)

    def rhs(w):
        return gamma * (_gain(w, u, v) - phi * w)

    W = W0.copy()
    out = []
    for t, n, h in _segment_counts(sample_times, 0.0, dt):
        for _ in range(n):
            k1 = rhs(W)
            k2 = rhs(W + 0.5 * h * k1)
            k3 = rhs(W + 0.5 * h * k2)
            k4 = rhs(W + h * k3)
            W = W + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out.append(W.copy())
    return np.array(out)


def _solve_volterra(W0, gamma, sample_times, dt):
    """Duhamel marching: exact loss propagation, trapezoid on the rank-2 gain history."""
    N = len(W0)
    u, v = _gain_basis(N)
    phi = CollisionKernel1D.phi(np.arange(N) / N)
    W = W0.copy()
    G = _gain(W, u, v)
    out = []
    for t, n, h in _segment_counts(sample_times, 0.0, dt):
        if n:
            E = np.exp(-gamma * phi * h)
            # W_next = E W + gamma h/2 (E G + G_next) with G_next linear in the
            # two moments of W_next: solve the 2x2 system for those moments
            c = gamma * h / 2.0
            uv = np.mean(u * v)
            uu = np.mean(u * u)
            vv = np.mean(v * v)
            L = np.array([[(8.0 / 3.0) * uv, (8.0 / 3.0) * uu - (4.0 / 3.0) * uv],
                          [(8.0 / 3.0) * vv, (8.0 / 3.0) * uv - (4.0 / 3.0) * vv]])
            lhs = np.eye(2) - c * L
            for _ in range(n):
                base = E * (W + c * G)
                m = np.linalg.solve(lhs, np.array([np.mean(u * base),
                                                   np.mean(v * base)]))
                G_next = (4.0 / 3.0) * ((2.0 * m[0] - m[1]) * v + 2.0 * m[1] * u)
                W = base + c * G_next
                G = G_next
        out.append(W.copy())
    return np.array(out)


def solve_homogeneous(W0, gamma, t_max, method="lines", dt=None, sample_times=None):
    """Relax homogeneous phonon data under the collision semigroup.

    Parameters
    ----------
    W0 : array or SpectralFunction
        Non-negative initial data on the Fourier grid.
    method : str
        "lines" (RK4 on the grid) or "volterra" (exact loss propagation with a
        trapezoid gain history); the two discretize differently and serve as
        cross-checks.
    dt : float | None
        Defaults to ``0.5 / (gamma * max phi)`` for lines and ``1e-3 / gamma``
        for volterra.
    """
    values, grid = _as_values(W0)
    if np.any(values < 0.0):
        raise NonPositiveInitial(f"W0 has min {values.min()}")
    if gamma <= 0.0:
        raise ValueError("gamma must be > 0")
    if t_max < 0.0:
        raise ValueError("t_max must be >= 0")
    if sample_times is None:
        sample_times = [t_max]
    sample_times = np.asarray(sample_times, dtype=float)
    if np.any(np.diff(sample_times) < 0) or np.any(sample_times < 0) \
            or np.any(sample_times > t_max + 1e-12):
        raise ValueError("sample_times must be sorted within [0, t_max]")
    if method == "lines":
        if dt is None:
            dt = 0.5 / (gamma * CollisionKernel1D.PHI_MAX)
        W = _solve_lines(values, gamma, sample_times, dt)
    elif method == "volterra":
        if dt is None:
            dt = 1e-3 / gamma
        W = _solve_volterra(values, gamma, sample_times, dt)
    else:
        raise ValueError("method must be 'lines' or 'volterra'")
    return HomogeneousSolution(sample_times, grid, W, method)


# ----------------------------------------------------------------------
# jump process

@dataclasses.dataclass
class PhononWalker:
    """Single-walker view: position, wavenumber, polarization (d >= 2), time."""

    X: np.ndarray | float
    K: np.ndarray | float
    i: int | None
    t: float


@dataclasses.dataclass
class PhononEnsemble:
    """Sampled jump-process ensemble; arrays indexed (sample time, walker)."""

    times: np.ndarray
    X: np.ndarray
    K: np.ndarray
    pol: np.ndarray | None
    events: list | None

    @property
    def n_walkers(self):
        return self.X.shape[1]

    def walker(self, j):
        i = int(self.pol[-1, j]) if self.pol is not None else None
        return PhononWalker(self.X[-1, j], self.K[-1, j], i, float(self.times[-1]))

    def final(self):
        return self.X[-1], self.K[-1]


def uniform_k_law(rng, n, d=1):
    if d == 1:
        return rng.uniform(0.0, 1.0, n)
    return rng.uniform(0.0, 1.0, (n, d))


def sample_from_density(values, rng, n):
    """Draw from the periodic piecewise-linear density through grid values on j/N."""
    values = np.asarray(values, dtype=float)
    if np.any(values < 0.0):
        raise NonPositiveInitial("density values must be >= 0")
    N = len(values)
    h = 1.0 / N
    left = values
    right = np.roll(values, -1)
    seg_mass = (left + right) * h / 2.0
    cum = np.concatenate([[0.0], np.cumsum(seg_mass)])
    total = cum[-1]
    if total <= 0.0:
        raise NonPositiveInitial("density must have positive mass")
    r = rng.uniform(0.0, total, n)
    seg = np.searchsorted(cum, r, side="right") - 1
    seg = np.clip(seg, 0, N - 1)
    rem = r - cum[seg]
    a = left[seg]
    b = right[seg]
    slope = (b - a) / h
    disc = np.maximum(a * a + 2.0 * slope * rem, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(np.abs(slope) > 1e-12 * np.maximum(a, 1e-300),
                     (np.sqrt(disc) - a) / slope,
                     rem / np.where(a > 0, a, 1.0))
    x = np.clip(x, 0.0, h)
    return (seg * h + x) % 1.0


def density_k_law(values):
    """K law drawing from the piecewise-linear density with the given grid values."""
    def law(rng, n):
        return sample_from_density(values, rng, n)
    return law


def _sample_kprime_1d(ks, rng):
    """Draw k' from R(k, .) / phi(k) by rejection under the exact per-k envelope."""
    out = np.empty_like(ks)
    env = CollisionKernel1D.envelope(ks)
    todo = np.arange(len(ks))
    while todo.size:
        prop = rng.uniform(0.0, 1.0, todo.size)
        accept = rng.uniform(0.0, 1.0, todo.size) * env[todo] \
            <= CollisionKernel1D.R(ks[todo], prop)
        out[todo[accept]] = prop[accept]
        todo = todo[~accept]
    return out


_SIN2_TABLE = None


def _sample_sin2(rng, n):
    """Draw from the density 2 sin^2(pi x) on [0, 1) via a tabulated inverse CDF."""
    global _SIN2_TABLE
    if _SIN2_TABLE is None:
        x = np.linspace(0.0, 1.0, 8193)
        _SIN2_TABLE = (x - np.sin(2.0 * np.pi * x) / (2.0 * np.pi), x)
    cdf, x = _SIN2_TABLE
    return np.interp(rng.uniform(0.0, 1.0, n), cdf, x)


def _sample_kprime_dd(K, rng):
    """Componentwise scattering in d >= 2: pick the channel by weight sin^2(pi k_l)."""
    n, d = K.shape
    w = np.sin(np.pi * K) ** 2
    w_cum = np.cumsum(w, axis=1)
    tot = w_cum[:, -1]
    pick = (rng.uniform(0.0, 1.0, n) * tot)[:, None]
    chan = np.sum(pick >= w_cum, axis=1)
    out = rng.uniform(0.0, 1.0, (n, d))
    out[np.arange(n), chan] = _sample_sin2(rng, n)
    return out


def simulate_phonon(walkers, K_law, model, gamma, t_max, d=1, rng=None,
                    sample_times=None, x0_law=None, record_events=False):
    """Run the phonon jump process: ballistic flights at group velocity, kernel jumps.

    Parameters
    ----------
    walkers : int
    K_law : callable
        ``rng, n -> K`` initial wavenumbers; see :func:`uniform_k_law` and
        :func:`density_k_law`.
    model : CouplingModel (d = 1) or DDCouplingModel (d >= 2)
        Supplies flight velocities.
    gamma : float
        Noise strength; gamma = 0 gives pure transport.
    sample_times : sequence | None
        Times at which (X, K) are recorded; t_max is always included.
    x0_law : callable | None
        ``rng, n -> X0``; defaults to all walkers starting at the origin.
    """
    if rng is None:
        rng = np.random.default_rng()
    n = int(walkers)
    kernel = CollisionKernelDD(d) if d >= 2 else CollisionKernel1D
    K = np.asarray(K_law(rng, n) if d == 1 else K_law(rng, n), dtype=float)
    if d >= 2 and K.shape != (n, d):
        raise ValueError("K_law must return shape (n, d)")
    if d == 1:
        X = np.zeros(n) if x0_law is None else np.asarray(x0_law(rng, n), dtype=float)
        V = model.omega_prime(K) / (2.0 * np.pi)
        pol = None
    else:
        X = np.zeros((n, d)) if x0_law is None else np.asarray(x0_law(rng, n), dtype=float)
        V = model.velocity(K)
        pol = rng.integers(0, d, n)

    if sample_times is None:
        sample_times = []
    ts = np.asarray(sorted(set(float(t) for t in sample_times) | {float(t_max)}))
    if np.any(ts < 0) or np.any(ts > t_max + 1e-12):
        raise ValueError("sample_times must lie in [0, t_max]")
    n_ts = len(ts)
    X_rec = np.empty((n_ts,) + X.shape)
    K_rec = np.empty((n_ts,) + K.shape)
    pol_rec = np.empty((n_ts, n), dtype=np.int64) if pol is not None else None
    ts_pad = np.concatenate([ts, [np.inf]])
    ptr = np.zeros(n, dtype=np.int64)
    events = [] if record_events else None

    t = np.zeros(n)
    # record a t = 0 sample up front (also covers t_max = 0)
    if ts_pad[0] == 0.0:
        X_rec[0] = X
        K_rec[0] = K
        if pol_rec is not None:
            pol_rec[0] = pol
        ptr += 1

    rate = gamma * kernel.phi(K)
    active = t < t_max
    while np.any(active):
        draws = rng.exponential(1.0, n)
        with np.errstate(divide="ignore"):
            tau = np.where(rate > 0.0, draws / np.where(rate > 0.0, rate, 1.0), np.inf)
        t_jump = t + tau
        flight_end = np.minimum(t_jump, t_max)
        # record sample times crossed during this flight
        while True:
            ts_cur = ts_pad[ptr]
            cross = active & (ts_cur <= flight_end) & (ts_cur >= t)
            if not np.any(cross):
                break
            idx = np.flatnonzero(cross)
            dt_c = ts_cur[idx] - t[idx]
            if d == 1:
                X_rec[ptr[idx], idx] = X[idx] + V[idx] * dt_c
            else:
                X_rec[ptr[idx], idx, :] = X[idx] + V[idx] * dt_c[:, None]
            K_rec[ptr[idx], idx] = K[idx]
            if pol_rec is not None:
                pol_rec[ptr[idx], idx] = pol[idx]
            ptr[idx] += 1
        # advance flights
        if d == 1:
            X = np.where(active, X + V * (flight_end - t), X)
        else:
            X = np.where(active[:, None], X + V * (flight_end - t)[:, None], X)
        t = np.where(active, flight_end, t)
        jumped = active & (t_jump <= t_max)
        if np.any(jumped):
            jdx = np.flatnonzero(jumped)
            if d == 1:
                K[jdx] = _sample_kprime_1d(K[jdx], rng)
                V[jdx] = model.omega_prime(K[jdx]) / (2.0 * np.pi)
                rate[jdx] = gamma * kernel.phi(K[jdx])
            else:
                K[jdx] = _sample_kprime_dd(K[jdx], rng)
                shift = rng.integers(1, d, jdx.size)
                pol[jdx] = (pol[jdx] + shift) % d
                V[jdx] = model.velocity(K[jdx])
                rate[jdx] = gamma * kernel.phi(K[jdx])
            if events is not None:
                for j in jdx:
                    events.append((float(t[j]), int(j),
                                   np.copy(X[j]), np.copy(K[j]),
                                   int(pol[j]) if pol is not None else None))
        active = t < t_max
    return PhononEnsemble(ts, X_rec, K_rec, pol_rec, events)


def solve_inhomogeneous_mc(mu0, model, gamma, t, walkers, rng=None, d=1):
    """Evolve an initial phase-space law mu0 by the jump process; returns samples at t.

    ``mu0(rng, n)`` must yield (X0, K0) arrays (plus polarization in d >= 2,
    drawn internally).  gamma = 0 degenerates to pure ballistic transport and
    t = 0 returns the initial samples unchanged.
    """
    if rng is None:
        rng = np.random.default_rng()
    holder = {}

    def k_law(r, n):
        x0, k0 = mu0(r, n)
        holder["x0"] = np.asarray(x0, dtype=float)
        return k0

    ens = simulate_phonon(walkers, k_law, model, gamma, t, d=d, rng=rng,
                          x0_law=lambda r, n: holder["x0"])
    return ens.final()
