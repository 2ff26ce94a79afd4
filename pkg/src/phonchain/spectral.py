"""Gaussian field samplers and spectral estimators for chain ensembles.

Normalization: on a ring of N sites with covariance profile W on the Fourier
grid, the sampled wave field obeys ``E |psi_hat(k_j)|^2 = N W(k_j)``, so the
energy spectrum estimator ``(eps/2) <|psi_hat|^2>`` integrates (grid mean over
k) to ``(eps/2)`` times the mean total energy, an exact identity on the same
data.
"""

from __future__ import annotations

import csv
import dataclasses

import numpy as np

from .lattice import ChainState

__all__ = [
    "NegativeCovariance",
    "ResolutionError",
    "GaussianFieldSpec",
    "SpectralFunction",
    "WignerEstimate",
    "equilibrium_spec",
    "perturbed_spec",
    "sample_homogeneous_gaussian",
    "estimate_energy_spectrum",
    "estimate_Y_field",
    "estimate_wigner",
]


class NegativeCovariance(ValueError):
    """The requested covariance profile is not pointwise non-negative."""


class ResolutionError(ValueError):
    """The x-grid is too fine for the lattice at this epsilon."""


def _fmt(x):
    return str(float(x))


@dataclasses.dataclass
class SpectralFunction:
    """Values on the Fourier grid k_j = j/N, optionally with pointwise stderr."""

    grid: np.ndarray
    values: np.ndarray
    stderr: np.ndarray | None = None

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values)
        if self.stderr is not None:
            self.stderr = np.asarray(self.stderr, dtype=float)

    @property
    def N(self):
        return len(self.grid)

    def integral(self):
        """Grid mean, the discretization of the torus integral."""
        return complex(np.mean(self.values)) if np.iscomplexobj(self.values) \
            else float(np.mean(self.values))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "value_re", "value_im", "stderr"])
            vals = np.asarray(self.values, dtype=complex)
            err = self.stderr if self.stderr is not None else np.zeros(self.N)
            for k, v, e in zip(self.grid, vals, err):
                writer.writerow([_fmt(k), _fmt(v.real), _fmt(v.imag), _fmt(e)])


@dataclasses.dataclass
class GaussianFieldSpec:
    """Spatially homogeneous Gaussian law for the wave field.

    ``covariance_W`` gives E|psi_hat|^2 / N on the torus: a scalar, an array on
    the sampling grid, or a callable of k.  The field-field pairing
    ``cross_Y`` must vanish for an admissible initial law; passing anything
    non-zero is rejected.
    """

    covariance_W: object
    cross_Y: object = None

    def __post_init__(self):
        if self.cross_Y is not None:
            arr = np.asarray(self.cross_Y)
            if np.any(arr != 0):
                raise ValueError("cross_Y must vanish for an admissible field law")

    def covariance_on(self, N):
        W = self.covariance_W
        if callable(W):
            W = W(np.arange(N) / N)
        W = np.broadcast_to(np.asarray(W, dtype=float), (N,)).copy()
        if np.any(W < 0.0):
            raise NegativeCovariance(f"covariance_W has min {W.min()}")
        return W


def equilibrium_spec(T):
    """Flat profile W = T: the Gibbs equilibrium at temperature T."""
    if T <= 0:
        raise ValueError("temperature must be > 0")
    return GaussianFieldSpec(float(T))


def _odd_transform(g, k):
    """h(k) = 2 sum_{z>0} g(z) sin(2 pi k z) for an odd real sequence g."""
    h = np.zeros_like(np.asarray(k, dtype=float))
    for z, v in g.items():
        if z > 0:
            h = h + 2.0 * v * np.sin(2.0 * np.pi * z * np.asarray(k, dtype=float))
    return h


def _validate_odd(g):
    g = {int(z): float(v) for z, v in g.items()}
    if g.get(0, 0.0) != 0.0:
        raise ValueError("an odd sequence must vanish at 0")
    for z, v in g.items():
        if z > 0 and -z in g and g[-z] != -v:
            raise ValueError(f"sequence is not odd at offset {z}")
    return g


def perturbed_spec(model, N, T, tau, g):
    """Tilted equilibrium profile W = omega / (omega/T + tau h), h the odd transform of g.

    Positive for |tau| below min(omega)/(T max|h|) on the grid; outside that
    range the profile loses positivity and is rejected.
    """
    g = _validate_odd(g)
    k = np.arange(N) / N
    om = model.omega(k)
    h = _odd_transform(g, k)
    denom = om / T + tau * h
    bad = (om > 0.0) & (denom <= 0.0)
    if np.any(bad):
        hmax = np.max(np.abs(h))
        bound = np.min(om[om > 0.0]) / (T * hmax) if hmax > 0 else np.inf
        raise NegativeCovariance(
            f"profile not positive at tau = {tau}; need |tau| < {bound:.3g}")
    W = np.where(om > 0.0, om / np.where(denom > 0.0, denom, 1.0), 0.0)
    return GaussianFieldSpec(W)


def sample_homogeneous_gaussian(spec, model, N, rng):
    """Draw one chain state whose wave field is the homogeneous Gaussian law of spec.

    Modes are independent proper complex Gaussians with E|psi_hat(k_j)|^2 =
    N W(k_j).  For an unpinned model the k = 0 mode is set to zero: the free
    mode carries no oscillator energy and admissible laws put no weight there.
    """
    W = spec.covariance_on(N)
    zeta = (rng.standard_normal(N) + 1j * rng.standard_normal(N)) / np.sqrt(2.0)
    psi_hat = np.sqrt(N * W) * zeta
    if model.kind == "unpinned":
        psi_hat[0] = 0.0
    return ChainState.from_psi(model, np.fft.ifft(psi_hat))


def _jackknife_mean(samples):
    """Mean and leave-one-out stderr along axis 0; works for complex input."""
    M = samples.shape[0]
    mean = samples.mean(axis=0)
    if M < 2:
        return mean, np.zeros(mean.shape, dtype=float)
    loo = (M * mean - samples) / (M - 1)
    dev = np.abs(loo - mean) ** 2
    err = np.sqrt((M - 1) / M * dev.sum(axis=0))
    return mean, err


def _psi_hat_stack(states):
    return np.stack([s.psi_hat() for s in states])


def estimate_energy_spectrum(states, epsilon):
    """Energy spectrum (eps/2) <|psi_hat|^2> with jackknife error bars."""
    ph = _psi_hat_stack(states)
    N = ph.shape[1]
    mean, err = _jackknife_mean(np.abs(ph) ** 2 * (epsilon / 2.0))
    return SpectralFunction(np.arange(N) / N, mean.real, err)


def estimate_Y_field(states, epsilon):
    """Off-diagonal field pairing (eps/2) <psi_hat(k) psi_hat(-k)>, complex valued."""
    ph = _psi_hat_stack(states)
    N = ph.shape[1]
    mirror = ph[:, (-np.arange(N)) % N]
    mean, err = _jackknife_mean(ph * mirror * (epsilon / 2.0))
    return SpectralFunction(np.arange(N) / N, mean, err)


@dataclasses.dataclass
class WignerEstimate:
    """Windowed position-frequency energy density on (x grid) x (k bands)."""

    x_grid: np.ndarray
    k_bands: np.ndarray
    values: np.ndarray
    stderr: np.ndarray

    def k_integral(self):
        """Band mean at each x: the local energy density profile."""
        return self.values.mean(axis=1)

    def marginal(self):
        """x-sum times dx at each band: compares against the energy spectrum."""
        dx = self.x_grid[1] - self.x_grid[0]
        return self.values.sum(axis=0) * dx

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "k", "value", "stderr"])
            for i, x in enumerate(self.x_grid):
                for j, k in enumerate(self.k_bands):
                    writer.writerow([_fmt(x), _fmt(k),
                                     _fmt(self.values[i, j]), _fmt(self.stderr[i, j])])


def estimate_wigner(states, epsilon, x_grid, k_band_count):
    """Positive Wigner-type estimator from overlapping triangular windows.

    The x grid must tile the macroscopic circle of circumference eps*N
    uniformly; each grid point carries a triangular window of half-width one
    grid spacing, so the windows form a partition of unity and the x-marginal
    reproduces the energy spectrum up to a window cross term that is small
    when correlations are short compared to the window.

    Raises ResolutionError when a window would cover fewer than 8 lattice
    sites, in which case no consistent estimate exists at this epsilon.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    N = states[0].N
    L = epsilon * N
    nx = len(x_grid)
    if nx < 2:
        raise ValueError("x_grid needs at least two points")
    dx = np.diff(x_grid)
    if not np.allclose(dx, dx[0], rtol=1e-9, atol=0.0):
        raise ValueError("x_grid must be uniform")
    dx = float(dx[0])
    if abs(nx * dx - L) > 1e-9 * L:
        raise ValueError(f"x_grid must tile the circle of circumference eps*N = {L}")
    if dx / epsilon < 8.0:
        raise ResolutionError(
            f"windows cover {dx / epsilon:.1f} sites; need at least 8")
    if N % k_band_count:
        raise ValueError("k_band_count must divide N")

    y = np.arange(N)
    xs = epsilon * y
    sq = np.empty((nx, N))
    for i, xc in enumerate(x_grid):
        dist = np.abs((xs - xc + L / 2.0) % L - L / 2.0)
        sq[i] = np.sqrt(np.maximum(0.0, 1.0 - dist / dx))

    width = N // k_band_count
    M = len(states)
    per_state = np.empty((M, nx, k_band_count))
    for m, state in enumerate(states):
        psi = state.psi()
        V = np.fft.fft(sq * psi[None, :], axis=1)
        spec = (epsilon / (2.0 * dx)) * np.abs(V) ** 2
        per_state[m] = spec.reshape(nx, k_band_count, width).mean(axis=2)

    mean, err = _jackknife_mean(per_state)
    k_bands = np.arange(k_band_count) * width / N + (width - 1) / (2.0 * N)
    return WignerEstimate(x_grid, k_bands, mean, err)
