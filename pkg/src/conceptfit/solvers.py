"""FISTA engine plus the three block subproblem definitions.

``fista_minimize`` runs accelerated proximal gradient with a backtracking
line search on a variable of any ndarray shape (inner products are taken
over all elements). The three ``*_subproblem`` builders package the smooth
value/gradient, prox, and nonsmooth value for a single question row of
[W | mu], a single learner column of C, and a single word column of T; the
``*_block_subproblem`` variants drive a whole block at once, which is what
the outer loop uses. Because the per-row (per-column) problems are
independent, one FISTA run on the stacked variable minimizes each of them.
"""

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import NonFiniteGradientError, ValidationError
from .model import inverse_logit

__all__ = [
    "FistaConfig",
    "SubproblemResult",
    "Subproblem",
    "fista_minimize",
    "prox_nonneg",
    "prox_w",
    "grad_w_row",
    "grad_c_column",
    "grad_t_column",
    "w_row_subproblem",
    "c_column_subproblem",
    "t_column_subproblem",
    "w_block_subproblem",
    "c_block_subproblem",
    "t_block_subproblem",
]

# Below this the line search gives up shrinking and accepts the candidate.
_STEP_FLOOR = 1e-18


@dataclass(frozen=True)
class FistaConfig:
    """Inner-solver knobs. The step size only ever shrinks."""

    max_iterations: int = 200
    initial_step: float = 1.0
    backtrack_factor: float = 0.5
    relative_tolerance: float = 1e-7

    def __post_init__(self):
        if not (isinstance(self.max_iterations, int) and self.max_iterations >= 1):
            raise ValidationError("max_iterations must be an integer >= 1")
        if not self.initial_step > 0:
            raise ValidationError("initial_step must be > 0")
        if not 0 < self.backtrack_factor < 1:
            raise ValidationError("backtrack_factor must be in (0, 1)")
        if not self.relative_tolerance > 0:
            raise ValidationError("relative_tolerance must be > 0")


@dataclass(frozen=True)
class SubproblemResult:
    solution: np.ndarray
    final_objective: float
    iterations_used: int


class Subproblem(NamedTuple):
    """Pieces of one composite problem: min smooth(x) + nonsmooth(x)."""

    smooth_value: Callable
    smooth_gradient: Callable
    prox: Callable
    nonsmooth_value: Optional[Callable] = None


def fista_minimize(smooth_gradient, smooth_value, prox, x0, config=None,
                   nonsmooth_value=None):
    """Accelerated proximal gradient with backtracking line search.

    ``prox(point, step)`` must be the exact proximal map of the nonsmooth
    term at the given step size (pass-through for a purely smooth problem).
    Plain momentum without restart; the step is halved until the standard
    quadratic upper bound holds and is carried over between iterations.
    Stops when the relative change of the composite objective falls below
    ``relative_tolerance`` or ``max_iterations`` is reached.

    Returns the best iterate visited, so the reported objective never
    exceeds the composite objective at ``x0``.
    """
    config = config or FistaConfig()
    penalty = nonsmooth_value if nonsmooth_value is not None else (lambda _: 0.0)
    x = np.array(x0, dtype=float)
    y = x.copy()
    t = 1.0
    step = config.initial_step
    f_prev = float(smooth_value(x)) + float(penalty(x))
    best_x, best_f = x.copy(), f_prev
    used = 0
    for k in range(1, config.max_iterations + 1):
        grad = np.asarray(smooth_gradient(y), dtype=float)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(k)
        f_y = float(smooth_value(y))
        while True:
            z = prox(y - step * grad, step)
            dz = z - y
            f_z = float(smooth_value(z))
            bound = (
                f_y
                + float(np.vdot(grad, dz))
                + float(np.vdot(dz, dz)) / (2.0 * step)
            )
            if f_z <= bound + 1e-12 * max(1.0, abs(f_y)) or step <= _STEP_FLOOR:
                break
            step *= config.backtrack_factor
        f_comp = f_z + float(penalty(z))
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = z + ((t - 1.0) / t_next) * (z - x)
        x, t = z, t_next
        used = k
        if f_comp < best_f:
            best_f = f_comp
            best_x = z.copy()
        if abs(f_prev - f_comp) <= config.relative_tolerance * max(1.0, abs(f_prev)):
            break
        f_prev = f_comp
    return SubproblemResult(solution=best_x, final_objective=best_f,
                            iterations_used=used)


def prox_nonneg(x):
    """Euclidean projection onto the nonnegative orthant."""
    return np.maximum(np.asarray(x, dtype=float), 0.0)


def prox_w(x, threshold):
    """Joint l1-plus-nonnegativity prox for an association row.

    Everything but the trailing (difficulty) slot is one-sided soft
    thresholded to max(0, v - threshold); the difficulty passes through
    untouched. Works on one row or a stack of rows.
    """
    if threshold < 0:
        raise ValidationError("threshold must be >= 0")
    arr = np.asarray(x, dtype=float)
    out = arr.copy()
    out[..., :-1] = np.maximum(arr[..., :-1] - threshold, 0.0)
    return out


def grad_w_row(y_obs, c_obs, b_row, T, w_aug, tau, epsilon=1e-6):
    """Smooth-part gradient of one question's [w_i | mu_i] subproblem.

    ``c_obs`` is the (K+1) x m matrix of knowledge columns for that
    question's observed learners, with a trailing all-ones row multiplying
    the difficulty slot. Pass ``b_row=None, T=None`` to drop the word-count
    term (grades-only fits). The precision tau multiplies the Bernoulli
    residual, as the chain rule through the tau-scaled logit requires.
    """
    w_aug = np.asarray(w_aug, dtype=float)
    z = w_aug @ c_obs
    p = inverse_logit(tau * z)
    g = c_obs @ (tau * (p - y_obs))
    if b_row is not None:
        a = np.maximum(w_aug[:-1] @ T, epsilon)
        g[:-1] += T @ (1.0 - b_row / a)
    return g


def grad_c_column(y_obs, w_obs, mu_obs, c, gamma, tau):
    """Gradient of one learner's knowledge-column subproblem (fully smooth)."""
    c = np.asarray(c, dtype=float)
    z = w_obs @ c + mu_obs
    p = inverse_logit(tau * z)
    return w_obs.T @ (tau * (p - y_obs)) + gamma * c


def grad_t_column(b_col, W, t, eta, epsilon=1e-6):
    """Gradient of one word's profile-column subproblem.

    Rates are floored at epsilon inside the ratio so the gradient stays
    finite whatever the current iterate.
    """
    t = np.asarray(t, dtype=float)
    a = np.maximum(W @ t, epsilon)
    return W.T @ (1.0 - b_col / a) + eta * t


def w_row_subproblem(y_obs, c_obs, b_row, T, tau, lam, epsilon=1e-6):
    """Composite problem for one row [w_i | mu_i] of the association block."""
    y_obs = np.asarray(y_obs, dtype=float)

    def value(w_aug):
        tz = tau * (w_aug @ c_obs)
        val = float(np.sum(np.logaddexp(0.0, -tz) + (1.0 - y_obs) * tz))
        if b_row is not None:
            a = np.maximum(w_aug[:-1] @ T, epsilon)
            val += float(np.sum(a - b_row * np.log(a)))
        return val

    def gradient(w_aug):
        return grad_w_row(y_obs, c_obs, b_row, T, w_aug, tau, epsilon)

    def prox(point, step):
        return prox_w(point, step * lam)

    def penalty(w_aug):
        return lam * float(np.sum(np.abs(w_aug[..., :-1])))

    return Subproblem(value, gradient, prox, penalty)


def c_column_subproblem(y_obs, w_obs, mu_obs, gamma, tau):
    """Smooth problem for one learner column of C; identity prox."""
    y_obs = np.asarray(y_obs, dtype=float)

    def value(c):
        tz = tau * (w_obs @ c + mu_obs)
        bern = float(np.sum(np.logaddexp(0.0, -tz) + (1.0 - y_obs) * tz))
        return bern + 0.5 * gamma * float(np.vdot(c, c))

    def gradient(c):
        return grad_c_column(y_obs, w_obs, mu_obs, c, gamma, tau)

    def prox(point, step):
        return point

    return Subproblem(value, gradient, prox)


def t_column_subproblem(b_col, W, eta, epsilon=1e-6):
    """Composite problem for one word column of T; nonnegative projection."""
    b_col = np.asarray(b_col, dtype=float)

    def value(t):
        a = np.maximum(W @ t, epsilon)
        return float(np.sum(a - b_col * np.log(a))) + 0.5 * eta * float(np.vdot(t, t))

    def gradient(t):
        return grad_t_column(b_col, W, t, eta, epsilon)

    def prox(point, step):
        return prox_nonneg(point)

    return Subproblem(value, gradient, prox)


def w_block_subproblem(grades, mask, c_aug, counts, T, tau, lam, epsilon=1e-6):
    """Stacked [W | mu] problem covering every question at once.

    ``grades`` and ``mask`` are dense Q x N float arrays (mask zeroes the
    unobserved cells); ``c_aug`` is (K+1) x N with a trailing ones row.
    ``counts=None, T=None`` drops the word-count term.
    """

    def value(X):
        tz = tau * (X @ c_aug)
        bern = float(np.sum((np.logaddexp(0.0, -tz) + (1.0 - grades) * tz) * mask))
        if counts is None:
            return bern
        a = np.maximum(X[:, :-1] @ T, epsilon)
        return bern + float(np.sum(a - counts * np.log(a)))

    def gradient(X):
        p = inverse_logit(tau * (X @ c_aug))
        g = ((tau * mask) * (p - grades)) @ c_aug.T
        if counts is not None:
            a = np.maximum(X[:, :-1] @ T, epsilon)
            g[:, :-1] += (1.0 - counts / a) @ T.T
        return g

    def prox(point, step):
        return prox_w(point, step * lam)

    def penalty(X):
        return lam * float(np.sum(np.abs(X[..., :-1])))

    return Subproblem(value, gradient, prox, penalty)


def c_block_subproblem(grades, mask, W, mu, gamma, tau):
    """Stacked knowledge problem covering every learner column of C."""
    offset = mu[:, None]

    def value(C):
        tz = tau * (W @ C + offset)
        bern = float(np.sum((np.logaddexp(0.0, -tz) + (1.0 - grades) * tz) * mask))
        return bern + 0.5 * gamma * float(np.vdot(C, C))

    def gradient(C):
        p = inverse_logit(tau * (W @ C + offset))
        return W.T @ ((tau * mask) * (p - grades)) + gamma * C

    def prox(point, step):
        return point

    return Subproblem(value, gradient, prox)


def t_block_subproblem(counts, W, eta, epsilon=1e-6):
    """Stacked word-profile problem covering every column of T."""

    def value(T):
        a = np.maximum(W @ T, epsilon)
        return float(np.sum(a - counts * np.log(a))) + 0.5 * eta * float(np.vdot(T, T))

    def gradient(T):
        a = np.maximum(W @ T, epsilon)
        return W.T @ (1.0 - counts / a) + eta * T

    def prox(point, step):
        return prox_nonneg(point)

    return Subproblem(value, gradient, prox)
