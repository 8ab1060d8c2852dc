"""Closed-form and combinatorial reference solutions.

These are the independent answers that training is predicted to reach: the
minimum-norm interpolator, the weighted-ridge optimum, the hard-margin
direction, the infinite-width kernel of the erf network, and the robust risk
summaries.  None of them runs gradient descent on the model being checked;
the max-margin solver additionally ships a subset-enumeration twin so the
two routes can be cross-validated on small instances.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    InvalidArgumentError,
    NoConvergenceError,
    NotSeparableError,
    UnsupportedError,
)
from .linalg import as_matrix, as_vector, extreme_eigenvalues, gram, min_norm_span_solve
from .models import ACTIVATIONS, LinearizedModel
from .reweighting import GroupInfo, group_means

_MARGIN_TOL = 1e-12


def min_norm_interpolator(x, y, theta0, f0_at_x) -> np.ndarray:
    """The unique interpolator whose displacement from theta0 lies in span{x_i}.

    Solves <theta, x_i> shifted by the initial outputs: theta = theta0 +
    span-solve(x, y - f0(x)).  For a plain linear model f0_at_x = x^T theta0,
    so the result satisfies x^T theta = y exactly.  Never reads any weights:
    two runs with different weight histories are predicted to land here
    regardless.
    """
    x = as_matrix(x, "data matrix")
    y = as_vector(y, "targets")
    theta0 = as_vector(theta0, "theta0")
    f0 = as_vector(f0_at_x, "initial outputs")
    if y.shape != f0.shape or y.shape[0] != x.shape[1] or theta0.shape[0] != x.shape[0]:
        raise InvalidArgumentError("inconsistent shapes for interpolator solve")
    return theta0 + min_norm_span_solve(x, y - f0)


def ridge_closed_form(x, y, q, mu: float, theta0, f0_at_x) -> np.ndarray:
    """Global optimum of the weighted squared loss plus (mu/2)||theta-theta0||^2.

    Computed in the n-dimensional dual form theta = theta0 +
    X Q (X^T X Q + mu I)^{-1} (y - f0), avoiding any d x d system.  The
    result satisfies the stationarity equation X Q (X^T delta - r) +
    mu delta = 0 with delta = theta - theta0 and r = y - f0.
    """
    if not (mu > 0):
        raise InvalidArgumentError("mu must be positive")
    x = as_matrix(x, "data matrix")
    y = as_vector(y, "targets")
    q = as_vector(q, "weights")
    theta0 = as_vector(theta0, "theta0")
    f0 = as_vector(f0_at_x, "initial outputs")
    n = x.shape[1]
    if not (y.shape[0] == q.shape[0] == f0.shape[0] == n) or theta0.shape[0] != x.shape[0]:
        raise InvalidArgumentError("inconsistent shapes for ridge solve")
    if np.any(q < 0) or abs(q.sum() - 1.0) > 1e-9:
        raise InvalidArgumentError("weights must lie on the probability simplex")
    r = y - f0
    system = gram(x) * q[None, :] + mu * np.eye(n)
    coef = np.linalg.solve(system, r)
    return theta0 + x @ (q * coef)


@dataclass(frozen=True)
class MarginSolution:
    """Hard-margin solution: unit direction, its margin, and the dual certificate.

    direction = sum_i alphas[i] * y_i * x_i with alphas >= 0 supported only on
    the active set; margin = min_i y_i <direction, x_i>.
    """

    direction: np.ndarray
    margin: float
    support_set: tuple[int, ...]
    alphas: np.ndarray


def _perceptron_separable(x: np.ndarray, y: np.ndarray, max_updates: int = 1_000_000) -> None:
    """Mistake-driven separability screen; raises when no separator is found."""
    w = np.zeros(x.shape[0])
    b = 0.0
    updates = 0
    while updates < max_updates:
        margins = y * (x.T @ w + b)
        bad = np.nonzero(margins <= 0)[0]
        if bad.size == 0:
            return
        i = int(bad[0])
        w += y[i] * x[:, i]
        b += y[i]
        updates += 1
    raise NotSeparableError(f"perceptron found no separator within {max_updates} updates")


def _signed_gram(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    z = x * y[None, :]
    return z, gram(z)


def _solution_from_dual(z: np.ndarray, alpha: np.ndarray) -> MarginSolution:
    w = z @ alpha
    norm = float(np.linalg.norm(w))
    if norm < _MARGIN_TOL:
        raise NotSeparableError("degenerate margin")
    direction = w / norm
    margins = z.T @ direction
    margin = float(margins.min())
    if margin < _MARGIN_TOL:
        raise NotSeparableError(f"degenerate margin {margin:.3e}")
    scaled = alpha / norm
    support = tuple(int(i) for i in np.nonzero(alpha > 1e-8 * alpha.max())[0])
    cleaned = np.where(alpha > 1e-8 * alpha.max(), scaled, 0.0)
    return MarginSolution(direction=direction, margin=margin, support_set=support, alphas=cleaned)


def max_margin_direction(x, y, max_iter: int = 100_000, tol: float = 1e-12) -> MarginSolution:
    """Unit vector maximizing the minimum label margin over the samples.

    Projected gradient ascent on the dual of { min ||w||^2 : y_i <w, x_i> >= 1 }
    with step 1/lambda_max of the signed Gram matrix.  Data is first screened
    for separability with a perceptron; use max_margin_bruteforce to
    cross-check results on n <= 10.
    """
    x = as_matrix(x, "data matrix")
    y = as_vector(y, "labels")
    if y.shape[0] != x.shape[1]:
        raise InvalidArgumentError("label count does not match the number of columns")
    if not np.all(np.abs(y) == 1.0):
        raise InvalidArgumentError("labels must be exactly -1 or +1")
    _perceptron_separable(x, y)
    z, g = _signed_gram(x, y)
    lam_max, _ = extreme_eigenvalues(g, 1e-10)
    if lam_max <= 0:
        raise NotSeparableError("all samples are at the origin")
    step = 1.0 / lam_max
    n = x.shape[1]
    alpha = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        grad = 1.0 - g @ alpha
        new_alpha = np.maximum(0.0, alpha + step * grad)
        move = float(np.abs(new_alpha - alpha).max())
        alpha = new_alpha
        if move <= tol * max(1.0, float(alpha.max())):
            break
    else:
        raise NoConvergenceError("dual projected gradient ascent hit the iteration cap")
    return _solution_from_dual(z, alpha)


def max_margin_bruteforce(x, y) -> MarginSolution:
    """Exact hard-margin solution by support-subset enumeration (n <= 10).

    For every candidate support set S, solves the equal-margin system
    G_S a = 1; a candidate is kept when its dual coefficients are
    non-negative and every sample attains margin >= 1.  The optimum is the
    feasible candidate of minimum norm.
    """
    x = as_matrix(x, "data matrix")
    y = as_vector(y, "labels")
    n = x.shape[1]
    if n > 10:
        raise InvalidArgumentError("brute-force enumeration is limited to n <= 10")
    if not np.all(np.abs(y) == 1.0):
        raise InvalidArgumentError("labels must be exactly -1 or +1")
    z, g = _signed_gram(x, y)
    best_norm = math.inf
    best = None
    for size in range(1, n + 1):
        for subset in itertools.combinations(range(n), size):
            sub = np.ix_(subset, subset)
            try:
                a = np.linalg.solve(g[sub], np.ones(size))
            except np.linalg.LinAlgError:
                continue
            if np.any(a < -1e-10):
                continue
            alpha = np.zeros(n)
            alpha[list(subset)] = np.maximum(a, 0.0)
            w = z @ alpha
            norm = float(np.linalg.norm(w))
            if norm < _MARGIN_TOL:
                continue
            if float((z.T @ w).min()) < 1.0 - 1e-9:
                continue
            if norm < best_norm - 1e-12:
                best_norm = norm
                best = alpha
    if best is None:
        raise NotSeparableError("no feasible support subset: data is not separable")
    return _solution_from_dual(z, best)


@dataclass(frozen=True)
class KernelSpec:
    """Depth, bias scale and activation of the infinite-width kernel."""

    depth: int
    beta: float
    activation: str = "erf"

    def __post_init__(self):
        if self.depth < 1:
            raise InvalidArgumentError("depth must be >= 1")
        if self.beta < 0:
            raise InvalidArgumentError("beta must be >= 0")


def _erf_pair_expectation(s11: float, s12: float, s22: float) -> float:
    # E[erf(u) erf(v)] for (u, v) centered Gaussian with covariance
    # [[s11, s12], [s12, s22]].
    denom = math.sqrt((1.0 + 2.0 * s11) * (1.0 + 2.0 * s22))
    arg = min(1.0, max(-1.0, 2.0 * s12 / denom))
    return (2.0 / math.pi) * math.asin(arg)


def ntk_limiting_kernel(spec: KernelSpec, x, xp) -> float:
    """Infinite-width tangent kernel of the zero-output-init erf network.

    Runs the layer covariance recursion starting from
    s = <x, x'>/d0 + beta^2 and finishes with the Gaussian expectation of
    the activations plus beta^2 (the only blocks with nonzero gradient at a
    zero-initialized output layer are the output weights and bias).
    """
    if spec.activation != "erf":
        raise UnsupportedError(
            f"closed form exists only for erf; use ntk_limiting_kernel_mc for {spec.activation!r}"
        )
    x = as_vector(x, "x")
    xp = as_vector(xp, "xp")
    if x.shape != xp.shape:
        raise InvalidArgumentError("points must have the same dimension")
    d0 = x.shape[0]
    b2 = spec.beta**2
    s11 = float(x @ x) / d0 + b2
    s12 = float(x @ xp) / d0 + b2
    s22 = float(xp @ xp) / d0 + b2
    for _ in range(spec.depth - 1):
        new11 = _erf_pair_expectation(s11, s11, s11) + b2
        new12 = _erf_pair_expectation(s11, s12, s22) + b2
        new22 = _erf_pair_expectation(s22, s22, s22) + b2
        s11, s12, s22 = new11, new12, new22
    return _erf_pair_expectation(s11, s12, s22) + b2


def ntk_limiting_kernel_mc(
    spec: KernelSpec, x, xp, samples: int = 1_000_000, seed: int = 0
) -> float:
    """Monte-Carlo estimate of the limiting kernel (any activation; approximate).

    Propagates the three covariance entries through the layers, estimating
    every Gaussian expectation from ``samples`` draws.  Deterministic for a
    fixed seed; accuracy is O(1/sqrt(samples)).
    """
    if spec.activation not in ACTIVATIONS:
        raise UnsupportedError(f"unknown activation {spec.activation!r}")
    act = ACTIVATIONS[spec.activation][0]
    x = as_vector(x, "x")
    xp = as_vector(xp, "xp")
    d0 = x.shape[0]
    b2 = spec.beta**2
    s11 = float(x @ x) / d0 + b2
    s12 = float(x @ xp) / d0 + b2
    s22 = float(xp @ xp) / d0 + b2
    rng = np.random.default_rng(seed)
    chunk = 1_000_000

    def expectations(a11: float, a12: float, a22: float) -> tuple[float, float, float]:
        acc = np.zeros(3)
        done = 0
        while done < samples:
            k = min(chunk, samples - done)
            z = rng.standard_normal((2, k))
            u = math.sqrt(max(a11, 0.0)) * z[0]
            if a11 > 0:
                c = a12 / a11
                resid = max(a22 - a12 * a12 / a11, 0.0)
                v = c * u + math.sqrt(resid) * z[1]
            else:
                v = math.sqrt(max(a22, 0.0)) * z[1]
            su, sv = act(u), act(v)
            acc += np.array([np.sum(su * su), np.sum(su * sv), np.sum(sv * sv)])
            done += k
        return tuple(acc / samples)

    for _ in range(spec.depth - 1):
        e11, e12, e22 = expectations(s11, s12, s22)
        s11, s12, s22 = e11 + b2, e12 + b2, e22 + b2
    _, e12, _ = expectations(s11, s12, s22)
    return e12 + b2


def empirical_ntk(lin: LinearizedModel, x, xp) -> float:
    """Finite-width tangent kernel: <grad f(x; theta0), grad f(x'; theta0)>."""
    return float(lin.features_at(x) @ lin.features_at(xp))


def top_fraction_mean(losses: np.ndarray, alpha: float) -> float:
    """Mean of the ceil(alpha*n) largest entries, ties toward lower index."""
    losses = as_vector(losses, "losses")
    if not (0.0 < alpha <= 1.0):
        raise InvalidArgumentError("alpha must be in (0, 1]")
    m = int(np.ceil(alpha * losses.shape[0]))
    order = np.argsort(-losses, kind="stable")
    return float(losses[order[:m]].mean())


def robust_risks(per_sample_losses, groups: GroupInfo, alpha: float):
    """(worst_group, cvar, balanced) summaries of a per-sample loss vector."""
    losses = as_vector(per_sample_losses, "losses")
    means = group_means(losses, groups)
    return float(means.max()), top_fraction_mean(losses, alpha), float(means.mean())
