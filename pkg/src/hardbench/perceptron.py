"""Perceptrons: teacher/student/probe vectors and max-margin training.

The student trainer maximizes the minimum margin ``min_mu y_mu (J . x_mu)``
over unit-norm J. Two facts drive the implementation:

* the smoothed objective ``softmin_beta(m) = -(1/beta) log sum exp(-beta m)``
  has gradient ``Xy^T p`` with ``p = softmax(-beta m)`` a probability vector,
  so every ascent step also yields a dual certificate: by minimax duality the
  optimal margin equals ``min_{lambda in simplex} ||Xy^T lambda||``, hence
  ``||Xy^T p||`` upper-bounds it while any unit J lower-bounds it;
* at the optimum the support vectors share one margin, so once the ascent has
  localized the support set the exact solution is a small equal-margin
  least-squares solve, refined by add/drop active-set steps.

Training therefore runs projected-gradient ascent on the smoothed objective
with an increasing beta schedule, polishing with the active-set solve until
the duality gap certifies the requested relative tolerance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .dataset import LabeledDataset, sign_label
from .rng import make_rng


@dataclass(frozen=True)
class Perceptron:
    """A unit-norm weight vector; normalization happens on construction."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64).ravel()
        if w.size < 1:
            raise ValueError("weights must have at least one entry")
        if not np.isfinite(w).all():
            raise ValueError("weights contain non-finite entries")
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            raise ValueError("weights must have positive norm")
        w = w / norm
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def d(self) -> int:
        return self.weights.size

    def to_json(self) -> str:
        return json.dumps({"d": self.d, "weights": self.weights.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "Perceptron":
        obj = json.loads(text)
        w = np.asarray(obj["weights"], dtype=np.float64)
        if w.size != obj["d"]:
            raise ValueError(f"declared d={obj['d']} but got {w.size} weights")
        return cls(w)


def random_perceptron(d: int, seed: int) -> Perceptron:
    """A uniformly random direction on the d-sphere."""
    rng = make_rng(seed)
    while True:
        w = rng.standard_normal(d)
        if np.linalg.norm(w) > 1e-12:
            return Perceptron(w)


@dataclass(frozen=True)
class TrainReport:
    student: Perceptron
    achieved_margin: float
    iterations: int
    converged: bool


# ---------------------------------------------------------------------------
# Error measures
# ---------------------------------------------------------------------------

def overlap(a: Perceptron, b: Perceptron) -> float:
    if a.d != b.d:
        raise ValueError(f"dimension mismatch: {a.d} vs {b.d}")
    return float(np.dot(a.weights, b.weights))


def error_from_overlap(r: float) -> float:
    """Generalization error arccos(R)/pi with R clamped to [-1, 1]."""
    return float(np.arccos(np.clip(r, -1.0, 1.0)) / np.pi)


def analytic_error(student: Perceptron, teacher: Perceptron) -> float:
    """Probability a fresh Gaussian point is classified differently by the two."""
    return error_from_overlap(overlap(student, teacher))


def monte_carlo_error(student: Perceptron, teacher: Perceptron, n_test: int, seed: int) -> float:
    """Empirical disagreement rate on n_test fresh Gaussian points."""
    if student.d != teacher.d:
        raise ValueError(f"dimension mismatch: {student.d} vs {teacher.d}")
    if n_test < 1:
        raise ValueError(f"need n_test >= 1, got {n_test}")
    rng = make_rng(seed)
    block = 65536  # fixed block size keeps the stream deterministic
    disagree = 0
    remaining = n_test
    while remaining > 0:
        b = min(block, remaining)
        x = rng.standard_normal((b, student.d))
        disagree += int(np.count_nonzero(sign_label(x @ student.weights) != sign_label(x @ teacher.weights)))
        remaining -= b
    return disagree / n_test


def rotate_from(base: Perceptron, angle: float, seed: int) -> Perceptron:
    """A unit vector at exactly ``angle`` radians from ``base``.

    The in-plane direction orthogonal to base is chosen at random from the
    seed, so repeated calls with different seeds sweep the cone around base.
    """
    if not 0.0 <= angle <= math.pi:
        raise ValueError(f"angle must be in [0, pi], got {angle}")
    if angle == 0.0:
        return base
    if base.d == 1:
        if abs(angle - math.pi) < 1e-15:
            return Perceptron(-base.weights)
        raise ValueError("in d=1 only angles 0 and pi are realizable")
    if abs(angle - math.pi) < 1e-15:
        return Perceptron(-base.weights)
    rng = make_rng(seed)
    while True:
        g = rng.standard_normal(base.d)
        u = g - np.dot(g, base.weights) * base.weights
        norm = np.linalg.norm(u)
        if norm > 1e-12:
            break
    u = u / norm
    return Perceptron(math.cos(angle) * base.weights + math.sin(angle) * u)


# ---------------------------------------------------------------------------
# Max-margin training
# ---------------------------------------------------------------------------

def _softmin_value(margins: np.ndarray, beta: float) -> float:
    lo = margins.min()
    return lo - math.log(np.exp(-beta * (margins - lo)).sum()) / beta


def _softmax_weights(margins: np.ndarray, beta: float) -> np.ndarray:
    w = np.exp(-beta * (margins - margins.min()))
    return w / w.sum()


def _affine_min_norm_coeffs(gram: np.ndarray) -> np.ndarray | None:
    """Coefficients of the min-norm point in the affine hull of a support block.

    Minimizing ||A^T mu||^2 subject to sum(mu)=1 has the KKT system
    [G 1; 1^T 0] [mu; nu] = [0; 1]. Solving it by least squares stays valid
    when G = A A^T is singular (support affinely spans through the origin): it
    then returns an affine representation of a least-norm point, which is all
    the minor cycle needs to walk toward and shed a support point.
    """
    k = gram.shape[0]
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = gram
    kkt[:k, k] = 1.0
    kkt[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    try:
        sol = np.linalg.solve(kkt, rhs)
        if not np.isfinite(sol).all():
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    mu = sol[:k]
    if not np.isfinite(mu).all():
        return None
    total = float(mu.sum())
    if abs(total - 1.0) > 1e-6:  # inconsistent system: hull is numerically broken
        return None
    return mu / total


class _WolfeState:
    """Support set, feasible multipliers and Gram block carried across polishes."""

    def __init__(self, xy: np.ndarray, first: int):
        self.xy = xy
        self.support = [int(first)]
        self.lam = np.ones(1)
        self.gram = np.atleast_2d(xy[first] @ xy[first])

    def add(self, idx: int) -> None:
        cross = self.xy[self.support] @ self.xy[idx]
        self.support.append(int(idx))
        self.lam = np.append(self.lam, 0.0)
        self.gram = np.block(
            [[self.gram, cross[:, None]], [cross[None, :], np.atleast_2d(self.xy[idx] @ self.xy[idx])]]
        )

    def delete(self, keep: np.ndarray) -> None:
        self.support = [s for s, k in zip(self.support, keep) if k]
        self.lam = self.lam[keep]
        self.lam /= self.lam.sum()
        self.gram = self.gram[np.ix_(keep, keep)]


def _wolfe_polish(state: _WolfeState, rel_tol: float, max_cycles: int):
    """Exact max-margin solve via Wolfe's minimum-norm-point algorithm.

    Minimizes ||xy^T lam|| over the simplex by major/minor cycles: the minor
    cycle walks the feasible lam toward the affine minimizer of the current
    support, deleting coordinates that hit zero (so the support stays a small
    independent "corral"); the major cycle adds the worst-margin point. Exits
    once the duality gap passes rel_tol, or with certified=False when stuck.

    Returns (J, lower, upper, certified, cycles_used) or None when the support
    collapses onto the origin (non-separable direction).
    """
    xy = state.xy
    best = None
    cycles = 0
    last_added = -1
    while cycles < max_cycles:
        cycles += 1
        # minor cycles: restore dual feasibility along the path to the
        # affine minimizer; each pass either finishes or deletes a point
        for _ in range(len(state.support) + 2):
            mu = _affine_min_norm_coeffs(state.gram)
            if mu is None:
                if len(state.support) == 1:
                    return None  # a single support row of zero norm: nothing to do
                keep = np.ones(len(state.support), dtype=bool)
                keep[int(np.argmin(state.lam))] = False
                state.delete(keep)
                continue
            if (mu >= -1e-14).all():
                state.lam = np.clip(mu, 0.0, None)
                state.lam /= state.lam.sum()
                break
            neg = mu < 0.0
            with np.errstate(divide="ignore", invalid="ignore"):
                steps = np.where(neg, state.lam / (state.lam - mu), np.inf)
            t = min(1.0, float(steps.min()))
            lam_new = state.lam + t * (mu - state.lam)
            keep = lam_new > 1e-14
            if keep.all():
                keep[int(np.argmin(lam_new))] = False
            if not keep.any():
                keep[int(np.argmax(lam_new))] = True
            state.lam = lam_new
            state.delete(keep)
        w = xy[state.support].T @ state.lam
        upper = float(np.linalg.norm(w))
        if upper < 1e-150:
            return None
        j = w / upper
        m_all = xy @ j
        i_min = int(np.argmin(m_all))
        lower = float(m_all[i_min])
        if best is None or lower > best[1]:
            best = (j, lower, upper, False, cycles)
        if lower >= upper * (1.0 - rel_tol):
            return j, lower, upper, True, cycles
        if i_min in state.support or i_min == last_added:
            break  # numerically stuck: the worst point keeps falling back out
        state.add(i_min)
        last_added = i_min
    j, lower, upper, _, cycles = best
    return j, lower, upper, False, cycles


def train_max_margin(ds: LabeledDataset, tol: float = 1e-4, max_iter: int = 100_000) -> TrainReport:
    """Train a unit-norm max-margin student on a (separable) dataset.

    The returned margin is within ``tol`` relatively of the optimum whenever
    ``converged`` is True (certified by the duality gap). On non-separable
    data the report comes back with ``converged=False`` and the best direction
    found; no exception is raised.
    """
    if tol <= 0.0:
        raise ValueError(f"tol must be positive, got {tol}")
    xy = ds.features * ds.labels[:, None]
    n, d = xy.shape
    scale = float(np.median(np.linalg.norm(xy, axis=1)))
    degenerate_floor = 1e-12 * max(scale, 1e-30)

    w0 = xy.mean(axis=0)
    if np.linalg.norm(w0) < 1e-300:
        w0 = xy[0].copy()
    j = w0 / np.linalg.norm(w0)

    margins = xy @ j
    best_j, best_lower = j, float(margins.min())
    best_upper = float(np.linalg.norm(w0))  # mean = Xy^T uniform, a valid dual point
    beta = 2.0 / max(float(margins.max() - margins.min()), 1e-12)
    iterations = 0
    polish_every = 20

    def gap_ok() -> bool:
        return best_upper - best_lower <= tol * max(abs(best_upper), degenerate_floor)

    wolfe = _WolfeState(xy, int(np.argmin(margins)))

    def try_polish() -> bool:
        nonlocal best_j, best_lower, best_upper, iterations
        polished = _wolfe_polish(wolfe, rel_tol=tol, max_cycles=4 * d + 256)
        if polished is None:
            return False
        pj, plower, pupper, certified, rounds = polished
        iterations += rounds
        if plower > best_lower:
            best_lower, best_j = plower, pj
        best_upper = min(best_upper, pupper)
        return certified

    try_polish()
    while iterations < max_iter and not gap_ok():
        iterations += 1
        margins = xy @ j
        lower = float(margins.min())
        if lower > best_lower:
            best_lower, best_j = lower, j
        p = _softmax_weights(margins, beta)
        g = xy.T @ p
        best_upper = min(best_upper, float(np.linalg.norm(g)))
        if gap_ok():
            break

        g_tan = g - np.dot(g, j) * j
        gnorm = float(np.linalg.norm(g_tan))
        if gnorm < 1e-14 * max(best_upper, 1e-30):
            beta = min(beta * 2.0, 1e250)  # smoothed optimum reached; sharpen
        else:
            f0 = _softmin_value(margins, beta)
            spread = max(float(margins.max()) - lower, 1e-12)
            eta = 0.5 * spread / max(gnorm, 1e-30)
            accepted = False
            for _ in range(12):
                cand = j + eta * g_tan
                cand /= np.linalg.norm(cand)
                if _softmin_value(xy @ cand, beta) > f0 + 1e-4 * eta * gnorm**2:
                    j = cand
                    accepted = True
                    break
                eta *= 0.5
            if not accepted:
                beta = min(beta * 2.0, 1e250)

        if iterations % polish_every == 0:
            try_polish()
        if best_upper < degenerate_floor:
            break  # min-norm point collapsed to 0: not separable

    converged = gap_ok() and best_lower > 0.0
    student = Perceptron(best_j)
    return TrainReport(
        student=student,
        achieved_margin=float((xy @ student.weights).min()),
        iterations=iterations,
        converged=converged,
    )
