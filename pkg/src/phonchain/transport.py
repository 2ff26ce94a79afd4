"""Energy transport: currents, correlation decay, conductivity, spread exponents.

The microscopic energy current of the chain is a quadratic form in (q, p);
for a Gaussian homogeneous field its equal-time second moment reduces to a
grid integral over the band, which this module exploits both as a prediction
and as an exactness check.  The kinetic counterparts are one-dimensional
quadratures over the dispersion and the scattering rate: the current
autocorrelation

    C(t) = (T^2 / 4 pi^2) integral |omega'(k)|^2 exp(-gamma phi(k) |t|) dk,

its time integral (the conductivity), Laplace transforms against resolvent
solutions, and the spread exponents of the phonon jump process.
"""

from __future__ import annotations

import dataclasses
import warnings

import numpy as np
from scipy import integrate

from .kinetic import CollisionKernel1D, simulate_phonon, uniform_k_law
from .spectral import _odd_transform, _validate_odd

__all__ = [
    "InadmissibleG",
    "EmptyWindow",
    "NonPowerDecay",
    "Divergent",
    "CurrentObservable",
    "CorrelationSeries",
    "ScalingFit",
    "ResolventSolution",
    "kinetic_current_correlation",
    "micro_current_correlation",
    "total_time_covariance",
    "micro_total_covariance",
    "kappa0",
    "green_kubo_kappa",
    "decay_exponent",
    "superdiffusion_exponent",
    "suggested_fit_window",
    "resolvent_f_lambda",
    "laplace_covariance_quad",
]


class InadmissibleG(ValueError):
    """Coupling sequences for conserved-field observables must be odd."""


class EmptyWindow(ValueError):
    """A fit window that contains fewer than four sample points."""


class NonPowerDecay(ValueError):
    """Raised when log-log data bends too much to be called a power law."""


@dataclasses.dataclass
class Divergent:
    """Marker for a conductivity integral with no infrared limit.

    ``cutoff_scaling`` is the fitted slope of log I(rho) against log rho,
    where I(rho) truncates the band integral at |k| >= rho.
    """

    cutoff_scaling: float
    cutoffs: np.ndarray
    truncated_values: np.ndarray


def _odd_dict(g):
    try:
        g = _validate_odd(dict(g))
    except ValueError as exc:
        raise InadmissibleG(str(exc)) from None
    if not any(z > 0 and v != 0.0 for z, v in g.items()):
        raise InadmissibleG("sequence has no nonzero positive offsets")
    return g


class CurrentObservable:
    """Energy current functionals of a chain state.

    ``pair_current(state, z)`` is the per-pair flow over offset z,
    ``section_flux(state)`` the total flow through each lattice cut, and
    ``total(state)`` the volume-summed current; the three are linked by
    ``section_flux.sum() == total == sum_z z * pair_current(z).sum()``.
    """

    def __init__(self, model):
        self.model = model
        self.offsets = [z for z in model.alpha if z > 0]
        self.weights = {z: model.alpha[z] for z in self.offsets}

    def pair_current(self, state, z):
        if z not in self.weights:
            raise ValueError(f"model has no coupling at offset {z}")
        a = self.weights[z]
        q, p = state.q, state.p
        return -0.5 * a * (np.roll(q, -z) * p - q * np.roll(p, -z))

    def section_flux(self, state):
        q, p = state.q, state.p
        out = np.zeros(state.N)
        for z in self.offsets:
            a = self.weights[z]
            for y in range(z):
                out += -0.5 * a * (np.roll(q, -(z - y)) * np.roll(p, y)
                                   - np.roll(q, y) * np.roll(p, -(z - y)))
        return out

    def total(self, state):
        q, p = state.q, state.p
        acc = 0.0
        for z in self.offsets:
            a = self.weights[z]
            acc += -0.5 * z * a * (np.dot(np.roll(q, -z), p) - np.dot(q, np.roll(p, -z)))
        return acc


@dataclasses.dataclass
class CorrelationSeries:
    """A correlation function sampled on a time grid."""

    times: np.ndarray
    values: np.ndarray
    stderr: np.ndarray | None = None

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t,value,stderr\n")
            for i, t in enumerate(self.times):
                se = self.stderr[i] if self.stderr is not None else 0.0
                fh.write(f"{float(t)!s},{float(self.values[i])!s},{float(se)!s}\n")


@dataclasses.dataclass
class ScalingFit:
    """Least-squares power-law fit on a log-log window, with a bootstrap band."""

    abscissae: np.ndarray
    ordinates: np.ndarray
    exponent: float
    ci_low: float
    ci_high: float
    window: tuple
    residual: float


def _band_quad(func, t, gamma):
    """Integrate an even band integrand, clustering nodes near the soft point k = 0.

    Roundoff warnings from the adaptive rule are silenced: far into the decay
    the integrand is a narrow spike and the requested relative tolerance sits
    at the noise floor, which the rule reports even though the value itself is
    accurate (checked against dense midpoint sums in the tests).
    """
    w = min(0.25, 1.0 / np.sqrt(1.0 + gamma * t))
    pts = [w, 2.0 * w, 0.5 - w] if w < 0.125 else []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(func, 0.0, 0.5, points=pts or None, limit=200,
                                epsabs=0.0, epsrel=1e-10)
    return 2.0 * val


def _c_kinetic_point(model, T, gamma, t):
    def f(k):
        om_p = model.omega_prime(np.array([k]))[0]
        return om_p * om_p * np.exp(-gamma * CollisionKernel1D.phi(k) * abs(t))

    return (T * T / (4.0 * np.pi ** 2)) * _band_quad(f, abs(t), gamma)


def kinetic_current_correlation(model, T, gamma, times):
    """C(t) from the kinetic prediction, one adaptive quadrature per time."""
    times = np.asarray(times, dtype=float)
    vals = np.array([_c_kinetic_point(model, T, gamma, t) for t in times])
    return CorrelationSeries(times, vals)


def _covariance_grid(model, g, n=16384):
    """Midpoint-grid tables for the conserved-field covariance integrand."""
    k = (np.arange(n) + 0.5) / n
    h = _odd_transform(g, k)
    om2 = model.alpha_hat(k)
    phi = CollisionKernel1D.phi(k)
    return h * h / om2, phi


def total_time_covariance(g, model, T, gamma, times, n=16384):
    """F(t) = T^2 integral (|g_hat|^2 / omega^2) exp(-gamma phi t) dk for odd g.

    The integrand is evaluated on a midpoint grid, which never touches a
    vanishing omega and converges spectrally for smooth profiles.
    """
    g = _odd_dict(g)
    base, phi = _covariance_grid(model, g, n)
    times = np.asarray(times, dtype=float)
    vals = T * T * np.mean(base[None, :] * np.exp(-gamma * phi[None, :]
                                                  * np.abs(times)[:, None]), axis=1)
    return CorrelationSeries(times, vals)


def _multi_origin_products(series, n_origin, stride, n_tau, scale):
    """Average products x(o) x(o + tau) over origins for one recorded series."""
    out = np.empty(n_tau)
    for j in range(n_tau):
        acc = 0.0
        for o in range(n_origin):
            acc += series[o * stride] * series[o * stride + j]
        out[j] = acc / n_origin * scale
    return out


def _micro_covariance(observable, sampler, model, cfg, M, tau_grid, origins, threads):
    from .dynamics import simulate_ensemble

    tau_grid = np.asarray(tau_grid, dtype=float)
    if len(tau_grid) < 2 or tau_grid[0] != 0.0:
        raise ValueError("tau grid must start at 0 and hold at least two points")
    dtau = tau_grid[1] - tau_grid[0]
    if np.abs(np.diff(tau_grid) - dtau).max() > 1e-9 * dtau:
        raise ValueError("tau grid must be uniform")
    stride = int(round(origins[1] / dtau)) if len(origins) > 1 else 0
    for i, o in enumerate(origins):
        if abs(o - i * stride * dtau) > 1e-9 * max(dtau, 1.0):
            raise ValueError("origins must be evenly spaced on the tau grid")
    times = np.arange(len(tau_grid) + (len(origins) - 1) * stride) * dtau
    cfg = dataclasses.replace(cfg, horizon=float(times[-1]) if times[-1] > 0 else cfg.horizon)
    records = simulate_ensemble(sampler, cfg, M, observers={"v": observable},
                                times=times, threads=threads)
    n_tau = len(tau_grid)
    per_run = np.array([
        _multi_origin_products(rec.observables["v"], len(origins), stride, n_tau, 1.0)
        for rec in records])
    mean = per_run.mean(axis=0)
    stderr = per_run.std(axis=0, ddof=1) / np.sqrt(M)
    return CorrelationSeries(tau_grid, mean, stderr)


def micro_current_correlation(model, T, cfg, N, M, tau_grid, origins=(0.0,),
                              threads=1):
    """Estimate the per-site current autocorrelation from microscopic runs.

    Records the volume-summed current along M equilibrium trajectories of an
    N-site chain and averages ``J(o) J(o + tau) / N`` over the given time
    origins, which must sit on the (uniform) tau grid.  Returns a series with
    ensemble stderr.
    """
    from .spectral import equilibrium_spec, sample_homogeneous_gaussian

    current = CurrentObservable(model)

    def sampler(rng):
        return sample_homogeneous_gaussian(equilibrium_spec(T), model, N, rng)

    def observable(state):
        return current.total(state) / np.sqrt(state.N)

    series = _micro_covariance(observable, sampler, model, cfg, M,
                               tau_grid, origins, threads)
    return series


def micro_total_covariance(g, model, T, cfg, N, M, tau_grid, origins=(0.0,),
                           threads=1):
    """Microscopic time covariance of the conserved-field observable built from odd g."""
    from .spectral import equilibrium_spec, sample_homogeneous_gaussian

    g = _odd_dict(g)

    def sampler(rng):
        return sample_homogeneous_gaussian(equilibrium_spec(T), model, N, rng)

    def observable(state):
        q, p = state.q, state.p
        conv = np.zeros(state.N)
        for z, v in g.items():
            if z > 0:
                conv += v * (np.roll(q, -z) - np.roll(q, z))
        return np.dot(conv, p) / np.sqrt(state.N)

    return _micro_covariance(observable, sampler, model, cfg, M,
                             tau_grid, origins, threads)


def _kappa_integrand(model, gamma):
    def f(k):
        om_p = model.omega_prime(k)
        return om_p * om_p / (gamma * CollisionKernel1D.phi(k)) / (4.0 * np.pi ** 2)

    return f


def kappa0(model, gamma, tol=1e-8):
    """Conductivity of the kinetic model: (1/4 pi^2) integral |omega'|^2 / (gamma phi).

    For a gapped band the integrand is bounded and the midpoint rule is
    refined until two successive doublings agree to ``tol`` relatively.  For
    an acoustic band the integral has no infrared limit; a :class:`Divergent`
    marker is returned carrying the fitted cutoff scaling of the truncated
    integral.
    """
    f = _kappa_integrand(model, gamma)
    if model.kind == "unpinned":
        cutoffs = np.geomspace(1e-4, 1e-2, 9)
        vals = []
        for rho in cutoffs:
            v, _ = integrate.quad(f, rho, 0.5, limit=400, epsrel=1e-10,
                                  points=[2.0 * rho, 10.0 * rho])
            vals.append(2.0 * v)
        vals = np.array(vals)
        slope = np.polyfit(np.log(cutoffs), np.log(vals), 1)[0]
        return Divergent(float(slope), cutoffs, vals)
    n = 4096
    prev = None
    for _ in range(12):
        k = (np.arange(n) + 0.5) / n
        cur = float(np.mean(f(k)))
        if prev is not None and abs(cur - prev) <= tol * abs(cur):
            return cur
        prev = cur
        n *= 2
    raise RuntimeError("kappa0 grid refinement did not converge")


def green_kubo_kappa(model, T, gamma, t_split=50.0):
    """Conductivity as the time integral of C(t) / T^2, with an algebraic tail map.

    The range [0, t_split] is integrated directly; the tail substitutes
    t = u^-2, under which the t^-3/2 decay of the gapped-band correlation
    becomes a bounded smooth integrand.
    """

    def c_of_t(t):
        return _c_kinetic_point(model, T, gamma, t)

    head, _ = integrate.quad(c_of_t, 0.0, t_split, limit=300, epsrel=1e-10)
    u_max = 1.0 / np.sqrt(t_split)
    tail, _ = integrate.quad(lambda u: 2.0 * c_of_t(u ** -2) / u ** 3,
                             0.0, u_max, limit=300, epsrel=1e-9)
    return (head + tail) / (T * T)


def decay_exponent(times, values, window, curvature_tol=0.05):
    """Fit a power law to positive data over a time window, rejecting bent data.

    Raises :class:`EmptyWindow` with fewer than four in-window points and
    :class:`NonPowerDecay` when the quadratic log-log coefficient exceeds
    ``curvature_tol`` (an exponential, for example, bends far more than that
    across any decade).
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    lo, hi = window
    mask = (times >= lo) & (times <= hi)
    if mask.sum() < 4:
        raise EmptyWindow(f"window {window} holds {int(mask.sum())} points, need 4")
    t = times[mask]
    v = values[mask]
    if np.any(v <= 0.0):
        raise ValueError("power-law fits need positive values")
    lt = np.log(t)
    lv = np.log(v)
    lt0 = lt - lt.mean()
    quad_coeff = np.polyfit(lt0, lv, 2)[0]
    if abs(quad_coeff) > curvature_tol:
        raise NonPowerDecay(
            f"log-log curvature {quad_coeff:.3g} exceeds {curvature_tol}")
    slope, intercept = np.polyfit(lt, lv, 1)
    fitted = slope * lt + intercept
    resid = float(np.sqrt(np.mean((lv - fitted) ** 2)))
    se = resid / np.sqrt(max(1.0, np.sum(lt0 ** 2)))
    return ScalingFit(t, v, float(slope), float(slope - 2.0 * se),
                      float(slope + 2.0 * se), (float(lo), float(hi)), resid)


def suggested_fit_window(model, gamma):
    """A window past the typical relaxation time: [10 / (gamma phi*), 100 x that].

    phi* is the median scattering rate over the band, so by the lower edge a
    typical phonon has scattered many times.
    """
    k = (np.arange(4096) + 0.5) / 4096
    phi_star = float(np.median(CollisionKernel1D.phi(k)))
    t_min = 10.0 / (gamma * phi_star)
    return (t_min, 100.0 * t_min)


def superdiffusion_exponent(model, gamma, window, walkers, seed=0, n_times=9,
                            k_law=None, bootstrap=64):
    """Spread exponent of the phonon jump process from median |X(t)| growth.

    Walkers start at the origin with wavenumbers from ``k_law`` (uniform by
    default), positions are recorded at log-spaced times inside ``window``,
    and the log-log slope of the median displacement is fitted.  The
    confidence band resamples whole walkers (``bootstrap`` replicates).
    """
    lo, hi = window
    if not (0.0 < lo < hi):
        raise ValueError("window must satisfy 0 < lo < hi")
    rng = np.random.default_rng(seed)
    ts = np.geomspace(lo, hi, n_times)
    law = k_law if k_law is not None else uniform_k_law
    ens = simulate_phonon(walkers, law, model, gamma, float(hi),
                          rng=rng, sample_times=ts)
    idx = [int(np.argmin(np.abs(ens.times - t))) for t in ts]
    X = ens.X[idx]
    med = np.median(np.abs(X), axis=1)
    if np.any(med <= 0.0):
        raise ValueError("median displacement vanished; window starts too early")
    lt = np.log(ts)
    slope = np.polyfit(lt, np.log(med), 1)[0]
    n = X.shape[1]
    boot = np.empty(bootstrap)
    for b in range(bootstrap):
        pick = rng.integers(0, n, n)
        mb = np.median(np.abs(X[:, pick]), axis=1)
        boot[b] = np.polyfit(lt, np.log(mb), 1)[0]
    lo_ci, hi_ci = np.percentile(boot, [2.5, 97.5])
    fitted = np.polyfit(lt, np.log(med), 1)
    resid = float(np.sqrt(np.mean((np.log(med) - np.polyval(fitted, lt)) ** 2)))
    return ScalingFit(ts, med, float(slope), float(lo_ci), float(hi_ci),
                      (float(lo), float(hi)), resid)


@dataclasses.dataclass
class ResolventSolution:
    """Solution of (lambda - gamma S) f = g on a cyclic offset grid."""

    f: np.ndarray
    g: np.ndarray
    lam: float
    gamma: float

    def residual(self):
        """max |lambda f - gamma S f - g| with S applied by its five-point stencil."""
        f = self.f
        smooth = 4.0 * f + np.roll(f, 1) + np.roll(f, -1)
        Sf = (np.roll(smooth, 1) + np.roll(smooth, -1) - 2.0 * smooth) / 6.0
        return float(np.abs(self.lam * f - self.gamma * Sf - self.g).max())


def resolvent_f_lambda(g, lam, gamma, n=4096):
    """Solve the resolvent equation of the scattering generator for odd data g.

    The generator acts on offset sequences with Fourier symbol ``-phi``, so
    the solution is ``f_hat = g_hat / (lambda + gamma phi)`` on the n-point
    grid; g is given as an odd offset dictionary.
    """
    g = _odd_dict(g)
    if lam <= 0.0:
        raise ValueError("lambda must be > 0")
    garr = np.zeros(n)
    for z, v in g.items():
        if z > 0:
            if z >= n // 2:
                raise ValueError("offset support too wide for the grid")
            garr[z] = v
            garr[n - z] = -v
    k = np.arange(n) / n
    denom = lam + gamma * CollisionKernel1D.phi(k)
    f = np.real(np.fft.ifft(np.fft.fft(garr) / denom))
    return ResolventSolution(f, garr, float(lam), float(gamma))


def laplace_transform_value(g, model, T, gamma, lam, n=16384):
    """T^2 <|g_hat|^2 / (omega^2 (lambda + gamma phi))> on a midpoint grid.

    This is the closed form of ``integral_0^inf exp(-lambda t) F(t) dt`` for
    the conserved-field covariance F.
    """
    g = _odd_dict(g)
    base, phi = _covariance_grid(model, g, n)
    return T * T * float(np.mean(base / (lam + gamma * phi)))


def laplace_covariance_quad(g, model, T, gamma, lam):
    """The same Laplace value by direct time quadrature of exp(-lambda t) F(t)."""
    g = _odd_dict(g)
    base, phi = _covariance_grid(model, g, 8192)

    def f_of_t(t):
        return T * T * float(np.mean(base * np.exp(-gamma * phi * t)))

    val, _ = integrate.quad(lambda t: np.exp(-lam * t) * f_of_t(t),
                            0.0, 60.0 / lam, limit=300, epsrel=1e-10)
    return val
