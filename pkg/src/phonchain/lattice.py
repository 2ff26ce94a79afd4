"""Coupling sequences, dispersion relations, and chain states.

Conventions used throughout the package:

* lattice Fourier transform ``v_hat(k) = sum_z exp(-2 pi i k z) v(z)`` with
  ``k`` on the unit torus ``[0, 1)``;
* the N-point grid is ``k_j = j / N``, and ``numpy.fft.fft`` matches the
  transform on that grid;
* ``int dk`` over the torus becomes the grid mean ``(1/N) sum_j``.
"""

from __future__ import annotations

import dataclasses

import numpy as np

__all__ = [
    "AssumptionViolation",
    "DegenerateDispersion",
    "CouplingModel",
    "DispersionTable",
    "ChainState",
    "build_coupling",
    "nearest_neighbor_coupling",
    "dispersion",
    "local_energy",
]

_SCAN_POINTS = 4096


class AssumptionViolation(ValueError):
    """A coupling sequence violates one of the structural hypotheses (a1)-(a4).

    ``item`` names the failed hypothesis: "a1" nontriviality, "a2" symmetry,
    "a3" decay certificate, "a4" spectral positivity.
    """

    def __init__(self, item, message):
        self.item = item
        super().__init__(f"({item}) {message}")


class DegenerateDispersion(ValueError):
    """omega vanishes at a grid point where the model kind forbids it."""


class CouplingModel:
    """Symmetric finite-range coupling sequence with any pinning absorbed into alpha(0).

    Attributes
    ----------
    alpha : dict[int, float]
        Offset to coefficient, with ``alpha[-y] == alpha[y]``.
    pinning : float
        Declared on-site stiffness omega0^2 (already included in ``alpha[0]``).
    decay_constants : tuple[float, float]
        Certificate ``(C1, C2)`` with ``|alpha(y)| <= C1 * exp(-C2 |y|)`` on the
        stored support.
    kind : str
        "pinned" when ``alpha_hat > 0`` on the whole torus, "unpinned" when
        ``alpha_hat(0) = 0`` with positive curvature there.
    """

    def __init__(self, alpha, pinning, decay_constants, kind):
        self.alpha = dict(sorted(alpha.items()))
        self.pinning = float(pinning)
        self.decay_constants = (float(decay_constants[0]), float(decay_constants[1]))
        self.kind = kind
        self.max_offset = max(abs(y) for y in self.alpha)
        self._grid_cache = {}

    def __repr__(self):
        return (f"CouplingModel(kind={self.kind!r}, pinning={self.pinning!r}, "
                f"alpha={self.alpha!r})")

    # ------------------------------------------------------------------
    # symbol and dispersion, valid for arbitrary k (vectorized)

    def alpha_hat(self, k):
        """Symbol ``sum_y alpha(y) cos(2 pi k y)``; real and even by construction."""
        k = np.asarray(k, dtype=float)
        out = np.full_like(k, self.alpha.get(0, 0.0))
        for y, a in self.alpha.items():
            if y > 0:
                out = out + 2.0 * a * np.cos(2.0 * np.pi * y * k)
        return out

    def alpha_hat_prime(self, k):
        k = np.asarray(k, dtype=float)
        out = np.zeros_like(k)
        for y, a in self.alpha.items():
            if y > 0:
                out = out - 4.0 * np.pi * y * a * np.sin(2.0 * np.pi * y * k)
        return out

    def alpha_hat_curv0(self):
        """Second derivative of the symbol at k = 0."""
        return -4.0 * np.pi ** 2 * sum(2.0 * y * y * a for y, a in self.alpha.items() if y > 0)

    def omega(self, k):
        return np.sqrt(np.maximum(self.alpha_hat(k), 0.0))

    def omega_prime(self, k):
        """Analytic group-velocity factor d omega / dk.

        For an unpinned model the value at k = 0 is the one-sided limit
        ``+sqrt(alpha_hat''(0)/2)``; approaching from the left the sign flips,
        which the formula produces automatically for any k > 0.
        """
        k = np.asarray(k, dtype=float)
        om = self.omega(k)
        ahp = self.alpha_hat_prime(k)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = ahp / (2.0 * om)
        if self.kind == "pinned":
            return ratio
        sound = np.sqrt(0.5 * self.alpha_hat_curv0())
        limit = np.where(np.mod(k, 1.0) < 0.5, sound, -sound)
        return np.where(om > 0.0, ratio, limit)

    def omega_prime_sup(self):
        kk = np.linspace(0.0, 0.5, 4097)
        sup = float(np.max(np.abs(self.omega_prime(kk))))
        if self.kind == "unpinned":
            sup = max(sup, float(np.sqrt(0.5 * self.alpha_hat_curv0())))
        return sup

    # ------------------------------------------------------------------
    # grid tables (cached; the integrator calls these every step)

    def grid_tables(self, N):
        """Return cached ``(alpha_hat, omega, omega_prime)`` on the grid j/N."""
        self._check_support(N)
        tab = self._grid_cache.get(N)
        if tab is None:
            k = np.arange(N) / N
            ah = self.alpha_hat(k)
            tab = (ah, np.sqrt(np.maximum(ah, 0.0)), self.omega_prime(k))
            self._grid_cache[N] = tab
        return tab

    def alpha_array(self, N):
        """Length-N wrapped coefficient array for periodic convolution."""
        self._check_support(N)
        arr = np.zeros(N)
        for y, a in self.alpha.items():
            arr[y % N] += a
        return arr

    def _check_support(self, N):
        if 4 * self.max_offset > N:
            raise ValueError(
                f"coupling support |y| <= {self.max_offset} exceeds N/4 with N = {N}")


@dataclasses.dataclass
class DispersionTable:
    """Dispersion sampled on the grid k_j = j/N."""

    grid: np.ndarray
    omega: np.ndarray
    omega_prime: np.ndarray


def nearest_neighbor_coupling(omega0_sq, alpha1):
    """Shorthand for ``build_coupling`` with the nearest-neighbor preset."""
    return build_coupling({"preset": "nearest_neighbor",
                           "omega0_sq": omega0_sq, "alpha1": alpha1})


def build_coupling(spec):
    """Construct a validated :class:`CouplingModel` from a declarative spec.

    Two forms are accepted::

        {"preset": "nearest_neighbor", "omega0_sq": w0sq, "alpha1": a1}
        {"alpha": {offset: value, ...}, "pinning": w0sq}   # pinning optional

    Explicit maps may list either or both signs of an offset; when both are
    present they must agree. The on-site pinning is added to ``alpha[0]``.

    Raises
    ------
    AssumptionViolation
        With the failed hypothesis: a1 (no off-site coupling), a2 (asymmetric
        coefficients), a4 (symbol not positive in the required sense).
    ValueError
        Malformed spec (unknown keys, negative pinning, bad preset values).
    """
    if not isinstance(spec, dict):
        raise ValueError("coupling spec must be a dict")
    spec = dict(spec)

    if "preset" in spec:
        name = spec.pop("preset")
        if name != "nearest_neighbor":
            raise ValueError(f"unknown preset {name!r}")
        omega0_sq = float(spec.pop("omega0_sq", 0.0))
        alpha1 = float(spec.pop("alpha1", 1.0))
        if spec:
            raise ValueError(f"unknown keys in coupling spec: {sorted(spec)}")
        if omega0_sq < 0.0:
            raise ValueError("omega0_sq must be >= 0")
        if alpha1 <= 0.0:
            raise ValueError("alpha1 must be > 0")
        alpha = {0: omega0_sq + alpha1, 1: -alpha1 / 2.0, -1: -alpha1 / 2.0}
        pinning = omega0_sq
    else:
        raw = spec.pop("alpha", None)
        pinning = float(spec.pop("pinning", 0.0))
        if spec:
            raise ValueError(f"unknown keys in coupling spec: {sorted(spec)}")
        if not raw:
            raise ValueError("coupling spec needs 'preset' or a non-empty 'alpha' map")
        if pinning < 0.0:
            raise ValueError("pinning must be >= 0")
        alpha = {}
        for y, a in raw.items():
            y = int(y)
            a = float(a)
            if y in alpha and alpha[y] != a:
                raise AssumptionViolation("a2", f"conflicting values for offset {y}")
            alpha[y] = a
        for y, a in list(alpha.items()):
            if -y in alpha:
                if alpha[-y] != a:
                    raise AssumptionViolation(
                        "a2", f"alpha({y}) = {a} but alpha({-y}) = {alpha[-y]}")
            else:
                alpha[-y] = a
        alpha[0] = alpha.get(0, 0.0) + pinning

    if not any(y != 0 and a != 0.0 for y, a in alpha.items()):
        raise AssumptionViolation("a1", "no coupling away from the diagonal")

    alpha = {y: a for y, a in alpha.items() if a != 0.0 or y == 0}
    decay = _decay_certificate(alpha)
    kind = _classify_symbol(alpha)
    return CouplingModel(alpha, pinning, decay, kind)


def _decay_certificate(alpha):
    """Least-squares exponential envelope (C1, C2) for the off-site coefficients.

    Any finite sequence admits one, so this never rejects; the certificate is
    stored so downstream bounds have concrete constants to work with.
    """
    ys = np.array([abs(y) for y, a in alpha.items() if y > 0 and a != 0.0], dtype=float)
    vals = np.array([abs(alpha[int(y)]) for y in ys])
    if len(ys) >= 2 and len(set(ys)) >= 2:
        slope, intercept = np.polyfit(ys, np.log(vals), 1)
        c2 = max(-slope, 1e-3)
    else:
        c2 = 1.0
    c1 = max(abs(a) * np.exp(c2 * abs(y)) for y, a in alpha.items())
    c1 *= 1.0 + 1e-12
    for y, a in alpha.items():
        if abs(a) > c1 * np.exp(-c2 * abs(y)):
            raise AssumptionViolation("a3", "decay certificate failed on the support")
    return (float(c1), float(c2))


def _classify_symbol(alpha):
    scale = sum(abs(a) for a in alpha.values())
    tol = 1e-12 * scale
    ah0 = sum(alpha.values())
    probe = CouplingModel(alpha, 0.0, (1.0, 1.0), "pinned")
    k = np.arange(1, _SCAN_POINTS) / _SCAN_POINTS
    interior = probe.alpha_hat(k)
    if ah0 > tol:
        if np.min(interior) <= 0.0:
            raise AssumptionViolation("a4", "alpha_hat must stay positive for a pinned chain")
        return "pinned"
    if ah0 < -tol:
        raise AssumptionViolation("a4", f"alpha_hat(0) = {ah0} is negative")
    curv = probe.alpha_hat_curv0()
    if curv <= tol:
        raise AssumptionViolation("a4", "alpha_hat''(0) must be positive for an unpinned chain")
    if np.min(interior) <= 0.0:
        raise AssumptionViolation("a4", "alpha_hat must be positive away from k = 0")
    return "unpinned"


def dispersion(model, N):
    """Tabulate omega and omega' on the grid j/N (N even, at least 4).

    Raises :class:`DegenerateDispersion` if omega vanishes anywhere for a
    pinned model, or at an interior grid point for an unpinned one.
    """
    if N < 4 or N % 2:
        raise ValueError("N must be an even integer >= 4")
    _, om, omp = model.grid_tables(N)
    zero = np.flatnonzero(om == 0.0)
    if model.kind == "pinned":
        if zero.size:
            raise DegenerateDispersion(f"omega vanishes at grid index {zero[0]}")
    else:
        if np.any(zero != 0):
            raise DegenerateDispersion(
                f"omega vanishes at interior grid index {zero[zero != 0][0]}")
    return DispersionTable(np.arange(N) / N, om.copy(), omp.copy())


class ChainState:
    """Positions and momenta of a periodic chain, with the wave field derived on demand.

    The complex wave field is ``psi = (omega_tilde * q + i p) / sqrt(2)`` where
    ``omega_tilde`` acts as multiplication by omega(k) in Fourier; its square
    modulus sums to the Hamiltonian.
    """

    __slots__ = ("model", "q", "p")

    def __init__(self, model, q, p):
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        if q.shape != p.shape or q.ndim != 1:
            raise ValueError("q and p must be 1-d arrays of equal length")
        self.model = model
        self.q = q
        self.p = p

    @property
    def N(self):
        return self.q.shape[0]

    def copy(self):
        return ChainState(self.model, self.q.copy(), self.p.copy())

    def psi_hat(self):
        """Wave field on the Fourier grid: (omega q_hat + i p_hat) / sqrt(2)."""
        _, om, _ = self.model.grid_tables(self.N)
        qh = np.fft.fft(self.q)
        ph = np.fft.fft(self.p)
        return (om * qh + 1j * ph) / np.sqrt(2.0)

    def psi(self):
        return np.fft.ifft(self.psi_hat())

    @classmethod
    def from_psi(cls, model, psi):
        """Invert the wave field back to (q, p).

        For an unpinned model the k = 0 displacement is not encoded in psi
        (the mode is free); it is set to zero.
        """
        psi = np.asarray(psi, dtype=complex)
        N = psi.shape[0]
        _, om, _ = model.grid_tables(N)
        ph_psi = np.fft.fft(psi)
        mirror = np.conj(ph_psi[(-np.arange(N)) % N])
        with np.errstate(divide="ignore", invalid="ignore"):
            qh = (ph_psi + mirror) / (np.sqrt(2.0) * om)
        qh = np.where(om > 0.0, qh, 0.0)
        ph = -1j * (ph_psi - mirror) / np.sqrt(2.0)
        q = np.fft.ifft(qh).real
        p = np.fft.ifft(ph).real
        return cls(model, q, p)

    def hamiltonian(self):
        """Total energy from real space: kinetic plus coupling quadratic form."""
        aq = np.zeros_like(self.q)
        for y, a in self.model.alpha.items():
            aq += a * np.roll(self.q, y)
        return 0.5 * float(self.p @ self.p) + 0.5 * float(self.q @ aq)

    def momentum(self):
        return float(np.sum(self.p))


def local_energy(state):
    """Per-site energy |psi(y)|^2; sums to the Hamiltonian."""
    return np.abs(state.psi()) ** 2
