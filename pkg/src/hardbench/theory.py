"""Statistical-mechanics predictions for max-margin students on pruned data.

The student-teacher overlap R of a max-margin perceptron trained on the
fraction ``f = P/N`` of a Gaussian dataset with the smallest teacher margins
solves a fixed-point equation:

    R = 2*alpha / (f*sqrt(2*pi)*sqrt(1-R^2))
        * int_{-inf}^{kappa} Dt exp(-R^2 t^2 / (2(1-R^2)))
          * [1 - exp(-gamma(gamma - 2Rt) / (2(1-R^2)))] * (kappa - t)

with ``Dt = dt exp(-t^2/2)/sqrt(2pi)`` and ``gamma = H^{-1}((N-P)/(2N))`` the
margin cutoff that keeping the smallest fraction f implies. kappa is the
max-margin value itself; it is fixed by the companion capacity condition

    1 - R^2 = alpha * int_{-inf}^{kappa} q(u) (kappa - u)^2 du,

where q is the student-field density of kept samples,

    q(u) = (1/f) * 2*phi(u) * [H(-R u / s) - H((gamma - R u)/s)],  s = sqrt(1-R^2)

(for f = 1 the cutoff gamma is infinite and q reduces to the classic
2*phi(u)*Phi(Ru/s)). The solver closes the system with an outer bisection on
kappa around a damped fixed-point iteration on R; generalization error is then
``arccos(R)/pi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .perceptron import error_from_overlap

_SQRT2PI = math.sqrt(2.0 * math.pi)
_TAIL_CUT = -12.0  # Gaussian integrands are < 1e-30 beyond here


class TheoryConvergenceError(RuntimeError):
    """Raised when the saddle-point solver fails; carries the last iterate."""

    def __init__(self, message: str, last_r: float, residual: float):
        super().__init__(f"{message} (last R={last_r:.8f}, residual={residual:.3e})")
        self.last_r = last_r
        self.residual = residual


# ---------------------------------------------------------------------------
# Gaussian tail and its inverse
# ---------------------------------------------------------------------------

def gaussian_tail_H(x: float) -> float:
    """Upper Gaussian tail mass H(x) = int_x^inf exp(-t^2/2)/sqrt(2pi) dt."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def inverse_H(p: float) -> float:
    """The x with H(x) = p, found by bisection on a bracketing interval."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0, 1), got {p}")
    lo, hi = -40.0, 40.0  # H(-40) ~ 1, H(40) ~ 0 to far below double precision
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if gaussian_tail_H(mid) > p:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return 0.5 * (lo + hi)


def _phi(t: float) -> float:
    return math.exp(-0.5 * t * t) / _SQRT2PI


# ---------------------------------------------------------------------------
# Saddle-point system
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SaddleInput:
    """Parameters of one saddle-point solve.

    kappa=None (the default) closes the system with the max-margin capacity
    condition; a numeric kappa pins the margin and solves only the R equation.
    """

    alpha: float
    keep_fraction: float = 1.0
    kappa: float | None = None
    quad_tol: float = 1e-9
    fp_tol: float = 1e-8
    damping: float = 0.5
    max_fp_iter: int = 400

    def __post_init__(self):
        if self.alpha <= 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ValueError(f"keep_fraction must be in (0, 1], got {self.keep_fraction}")


def _gamma_cutoff(keep_fraction: float) -> float:
    """Margin cutoff gamma = H^{-1}((N-P)/(2N)); infinite when nothing is pruned."""
    if keep_fraction >= 1.0:
        return math.inf
    return inverse_H((1.0 - keep_fraction) / 2.0)


def _overlap_integral(r: float, kappa: float, gamma: float, quad_tol: float) -> float:
    """The Dt integral of the R equation.

    The bracket [1 - exp(-gamma(gamma-2Rt)/(2(1-R^2)))] is merged with the
    Gaussian prefactor before exponentiating: the combined exponents are
    -R^2 t^2/(2 s^2) and -(gamma - R t)^2/(2 s^2), both bounded above by zero,
    so no intermediate overflow is possible even where the bare bracket blows
    up (t beyond gamma/(2R)).
    """
    s2 = 1.0 - r * r

    def integrand(t: float) -> float:
        lead = math.exp(-r * r * t * t / (2.0 * s2))
        if not math.isinf(gamma):
            lead -= math.exp(-((gamma - r * t) ** 2) / (2.0 * s2))
        return _phi(t) * lead * (kappa - t)

    pts = [0.0] if _TAIL_CUT < 0.0 < kappa else None
    val, _ = quad(integrand, _TAIL_CUT, kappa, epsabs=quad_tol, epsrel=1e-10, limit=200, points=pts)
    return val


def _r_map(r: float, kappa: float, gamma: float, alpha: float, f: float, quad_tol: float) -> float:
    """One application of the R fixed-point map."""
    s = math.sqrt(max(1.0 - r * r, 1e-300))
    return 2.0 * alpha / (f * _SQRT2PI * s) * _overlap_integral(r, kappa, gamma, quad_tol)


def _kept_field_density(u: float, r: float, gamma: float, f: float) -> float:
    """Density q(u) of the student field over kept examples."""
    s = math.sqrt(max(1.0 - r * r, 1e-300))
    tail = gaussian_tail_H(-r * u / s)
    if not math.isinf(gamma):
        tail -= gaussian_tail_H((gamma - r * u) / s)
    return 2.0 * _phi(u) * tail / f


def _capacity_residual(r: float, kappa: float, gamma: float, alpha: float, f: float, quad_tol: float) -> float:
    """alpha * E[(kappa - u)^2 ; u < kappa] - (1 - R^2); zero at the max margin."""

    def integrand(u: float) -> float:
        return _kept_field_density(u, r, gamma, f) * (kappa - u) ** 2

    pts = [0.0] if _TAIL_CUT < 0.0 < kappa else None
    val, _ = quad(integrand, _TAIL_CUT, kappa, epsabs=quad_tol, epsrel=1e-10, limit=200, points=pts)
    return alpha * val - (1.0 - r * r)


def _solve_r(kappa: float, gamma: float, alpha: float, f: float, inp: SaddleInput) -> float:
    """Damped fixed-point iteration for R at fixed kappa, bisection fallback."""
    r = 0.5
    last_residual = math.inf
    for _ in range(inp.max_fp_iter):
        m = _r_map(r, kappa, gamma, alpha, f, inp.quad_tol)
        m = min(max(m, 0.0), 1.0 - 1e-12)
        step = inp.damping * (m - r)
        r = min(max(r + step, 0.0), 1.0 - 1e-12)
        last_residual = abs(m - r)
        if abs(step) < inp.fp_tol:
            return r
    # fall back to bisection on g(R) = map(R) - R, which brackets at [0, 1)
    lo, hi = 0.0, 1.0 - 1e-10
    g_lo = _r_map(lo, kappa, gamma, alpha, f, inp.quad_tol) - lo
    g_hi = _r_map(hi, kappa, gamma, alpha, f, inp.quad_tol) - hi
    if g_lo * g_hi > 0:
        raise TheoryConvergenceError("R fixed point did not converge and cannot bracket", r, last_residual)
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        g_mid = _r_map(mid, kappa, gamma, alpha, f, inp.quad_tol) - mid
        if g_lo * g_mid <= 0:
            hi = mid
        else:
            lo, g_lo = mid, g_mid
        if hi - lo < inp.fp_tol:
            return 0.5 * (lo + hi)
    return 0.5 * (lo + hi)


def solve_saddle_point(inp: SaddleInput) -> float:
    """Overlap R of the max-margin student described by ``inp``.

    With kappa unset, kappa and R are solved jointly: an outer bisection moves
    kappa until the capacity residual vanishes, re-solving R at each trial
    kappa. Raises TheoryConvergenceError with diagnostics when either loop
    fails to bracket or settle.
    """
    f = inp.keep_fraction
    gamma = _gamma_cutoff(f)
    if inp.kappa is not None:
        return _solve_r(inp.kappa, gamma, inp.alpha, f, inp)

    def residual_at(kappa: float) -> tuple[float, float]:
        r = _solve_r(kappa, gamma, inp.alpha, f, inp)
        return _capacity_residual(r, kappa, gamma, inp.alpha, f, inp.quad_tol), r

    kappa_lo = 0.0
    res_lo, r_lo = residual_at(kappa_lo)
    if res_lo > 0.0:
        raise TheoryConvergenceError(
            "capacity residual positive already at kappa=0", r_lo, res_lo
        )
    kappa_hi = 0.25
    res_hi, r_hi = residual_at(kappa_hi)
    while res_hi < 0.0:
        kappa_hi *= 2.0
        if kappa_hi > 512.0:
            raise TheoryConvergenceError("no kappa bracket below 512", r_hi, res_hi)
        res_hi, r_hi = residual_at(kappa_hi)
    r_mid = r_hi
    for _ in range(200):
        kappa_mid = 0.5 * (kappa_lo + kappa_hi)
        res_mid, r_mid = residual_at(kappa_mid)
        if res_mid <= 0.0:
            kappa_lo = kappa_mid
        else:
            kappa_hi = kappa_mid
        if kappa_hi - kappa_lo < 1e-8 * max(1.0, kappa_hi):
            break
    return r_mid


# ---------------------------------------------------------------------------
# Curves and fits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TheoryCurve:
    """An (alpha, epsilon_g) series with the regime that produced it."""

    points: tuple[tuple[float, float], ...]
    regime: str  # random | hard
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        alphas = [a for a, _ in self.points]
        if any(b <= a for a, b in zip(alphas, alphas[1:])):
            raise ValueError("alphas must be strictly increasing")
        if any(not 0.0 <= e <= 0.5 for _, e in self.points):
            raise ValueError("epsilon values must lie in [0, 0.5]")

    @property
    def alphas(self) -> np.ndarray:
        return np.asarray([a for a, _ in self.points])

    @property
    def epsilons(self) -> np.ndarray:
        return np.asarray([e for _, e in self.points])


def theory_curve(alphas, keep_fraction: float = 1.0, **solver_kwargs) -> TheoryCurve:
    """Solve the saddle point across an alpha grid and map overlaps to errors."""
    points = []
    for alpha in alphas:
        r = solve_saddle_point(SaddleInput(alpha=float(alpha), keep_fraction=keep_fraction, **solver_kwargs))
        points.append((float(alpha), error_from_overlap(r)))
    regime = "random" if keep_fraction >= 1.0 else "hard"
    return TheoryCurve(points=tuple(points), regime=regime, parameters={"keep_fraction": keep_fraction})


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    prefactor: float
    r_squared: float


def fit_power_law(alphas, epsilons) -> PowerLawFit:
    """Least-squares fit of log(eps) against log(alpha)."""
    a = np.asarray(alphas, dtype=np.float64)
    e = np.asarray(epsilons, dtype=np.float64)
    if a.size != e.size or a.size < 3:
        raise ValueError("need at least 3 paired points")
    if (a <= 0).any() or (e <= 0).any():
        raise ValueError("power-law fit needs strictly positive alphas and epsilons")
    lx, ly = np.log(a), np.log(e)
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(((ly - pred) ** 2).sum())
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return PowerLawFit(exponent=float(slope), prefactor=float(math.exp(intercept)), r_squared=r2)
