"""Adam and L-BFGS over a flat vector of free parameters, plus the relative
loss-decrease stopping test.

Optimizers talk to an *objective* object with two methods:

``value_and_grad(theta) -> (float, ndarray)``
    loss and gradient at ``theta`` (may raise :class:`NonFiniteValue`);
``feasible(theta) -> bool``
    whether ``theta`` keeps every element Jacobian above the allowed floor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ElementInversion, LineSearchFailed, NonFiniteGradient, NonFiniteValue

MAX_HALVINGS = 30
ROUNDOFF = 1e-13  # relative loss change treated as round-off by the line search


# stopping -----------------------------------------------------------------------
def delta_loss(l_n: float, l_prev: float) -> tuple[float, bool]:
    """Relative decrease 2|l_n - l_prev| / |l_n + l_prev|.

    Returns ``(value, guarded)``; when the denominator is below
    1e-14 * max(|l_n|, |l_prev|, 1) the absolute change is returned instead
    and ``guarded`` is True.
    """
    den = abs(l_n + l_prev)
    if den < 1e-14 * max(abs(l_n), abs(l_prev), 1.0):
        return abs(l_n - l_prev), True
    return 2.0 * abs(l_n - l_prev) / den, False


def converged(l_n: float, l_prev: float, tol: float, tol_abs: float | None = None, flags: set | None = None) -> bool:
    """True when the relative loss decrease falls below ``tol``.

    If the two losses nearly cancel, ``|l_n - l_prev| < tol_abs`` decides
    (``tol_abs`` defaults to ``tol``) and ``DenominatorNearZero`` is added to
    ``flags``.
    """
    value, guarded = delta_loss(l_n, l_prev)
    if guarded:
        if flags is not None:
            flags.add("DenominatorNearZero")
        return value < (tol if tol_abs is None else tol_abs)
    return value < tol


@dataclass
class StepInfo:
    accepted: bool = True
    alpha: float = 0.0
    evals: int = 0
    halvings: int = 0
    fallback: bool = False
    wolfe: bool = False


def _guard_step(objective, theta, step) -> tuple[np.ndarray, int]:
    """Halve ``step`` until ``theta + step`` is feasible."""
    for k in range(MAX_HALVINGS + 1):
        trial = theta + step
        if objective.feasible(trial):
            return trial, k
        step = 0.5 * step
    raise ElementInversion(f"no admissible step after {MAX_HALVINGS} halvings")


def _check_grad(g):
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradient("gradient contains NaN or Inf")


# Adam ---------------------------------------------------------------------------
@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


def adam_step(state: AdamState, theta, grad) -> np.ndarray:
    """One bias-corrected Adam update; returns the new parameter vector."""
    grad = np.asarray(grad, dtype=float)
    _check_grad(grad)
    if state.m is None or state.m.shape != grad.shape:
        state.m = np.zeros_like(grad)
        state.v = np.zeros_like(grad)
        state.t = 0
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    with np.errstate(over="ignore"):
        state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    if not np.all(np.isfinite(state.v)):
        # an overflowed second moment would silently zero the step
        raise NonFiniteGradient("Adam second moment overflowed")
    mhat = state.m / (1.0 - state.beta1**state.t)
    vhat = state.v / (1.0 - state.beta2**state.t)
    return np.asarray(theta, dtype=float) - state.lr * mhat / (np.sqrt(vhat) + state.eps)


class Adam:
    """Adam with the element-inversion guard applied to each update."""

    name = "adam"

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.state = AdamState(lr, beta1, beta2, eps)

    def reset(self) -> None:
        s = self.state
        self.state = AdamState(s.lr, s.beta1, s.beta2, s.eps)

    def step(self, objective, theta, f, g):
        proposal = adam_step(self.state, theta, g)
        trial, halvings = _guard_step(objective, theta, proposal - theta)
        f_new, g_new = objective.value_and_grad(trial)
        return trial, f_new, g_new, StepInfo(True, 0.5**halvings, 1, halvings)


# L-BFGS ---------------------------------------------------------------------------
@dataclass
class LBFGSState:
    m: int = 10
    s: list = field(default_factory=list)
    y: list = field(default_factory=list)
    iterations: int = 0


def two_loop(state: LBFGSState, g) -> np.ndarray:
    """-H g with the inverse-Hessian approximation of the stored pairs."""
    q = np.array(g, dtype=float)
    if not state.s:
        return -q
    alphas = []
    rhos = [1.0 / float(y @ s) for s, y in zip(state.s, state.y)]
    for s, y, rho in zip(reversed(state.s), reversed(state.y), reversed(rhos)):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    s, y = state.s[-1], state.y[-1]
    r = q * (float(s @ y) / float(y @ y))
    for (s, y, rho), a in zip(zip(state.s, state.y, rhos), reversed(alphas)):
        b = rho * float(y @ r)
        r += (a - b) * s
    return -r


def _cubic_min(a1, f1, g1, a2, f2, g2, lo, hi):
    """Minimizer of the cubic interpolating two (value, slope) pairs,
    clipped to [lo, hi]; bisection if the cubic has no minimum."""
    d1 = g1 + g2 - 3.0 * (f1 - f2) / (a1 - a2)
    disc = d1 * d1 - g1 * g2
    if disc >= 0 and np.isfinite(disc):
        d2 = np.sign(a2 - a1) * np.sqrt(disc)
        den = g2 - g1 + 2.0 * d2
        if den != 0:
            a = a2 - (a2 - a1) * (g2 + d2 - d1) / den
            if np.isfinite(a):
                return min(max(a, lo), hi)
    return 0.5 * (lo + hi)


def strong_wolfe(objective, theta, f0, g0, d, alpha0, c1=1e-4, c2=0.9, max_evals=25, f_noise=ROUNDOFF):
    """Line search satisfying the strong Wolfe conditions.

    Returns ``(alpha, f, g, evals)``.  Infeasible or non-finite trial points
    count as f = +inf.  Once the loss change is at round-off level
    (``f <= f0 + f_noise * |f0|``) a point meeting the curvature condition
    is accepted even if sufficient decrease cannot be resolved, so the
    iteration keeps driving the gradient down.  Raises
    :class:`LineSearchFailed` after ``max_evals`` evaluations.
    """
    gtd0 = float(g0 @ d)
    evals = 0

    def phi(a):
        nonlocal evals
        evals += 1
        x = theta + a * d
        if not objective.feasible(x):
            return np.inf, None, np.nan
        try:
            f, g = objective.value_and_grad(x)
        except (NonFiniteValue, NonFiniteGradient):
            return np.inf, None, np.nan
        if not np.isfinite(f):
            return np.inf, None, np.nan
        return f, g, float(g @ d)

    slack = f_noise * abs(f0)

    def armijo(a, f):
        return f <= f0 + c1 * a * gtd0 or (f <= f0 + slack and c1 * a * abs(gtd0) <= slack)

    a_prev, f_prev, gtd_prev = 0.0, f0, gtd0
    a = alpha0
    bracket = None
    while evals < max_evals:
        f, g, gtd = phi(a)
        if not armijo(a, f) or (a_prev > 0 and f >= f_prev):
            bracket = (a_prev, f_prev, gtd_prev, a, f, gtd)
            break
        if abs(gtd) <= -c2 * gtd0:
            return a, f, g, evals
        if gtd >= 0:
            bracket = (a, f, gtd, a_prev, f_prev, gtd_prev)
            break
        a_next = _cubic_min(a_prev, f_prev, gtd_prev, a, f, gtd, a + 0.01 * (a - a_prev), 10.0 * a)
        a_prev, f_prev, gtd_prev = a, f, gtd
        a = a_next
    if bracket is None:
        raise LineSearchFailed(f"no bracket after {evals} evaluations")

    lo, f_lo, g_lo, hi, f_hi, g_hi = bracket
    # the low end always satisfies Armijo and has the smaller value
    best = None
    while evals < max_evals:
        width = abs(hi - lo)
        if width * np.max(np.abs(d)) < 1e-16 * max(1.0, np.max(np.abs(theta))):
            break
        left, right = min(lo, hi), max(lo, hi)
        if np.isfinite(f_hi) and np.isfinite(g_hi):
            a = _cubic_min(lo, f_lo, g_lo, hi, f_hi, g_hi, left, right)
        else:
            a = 0.5 * (lo + hi)
        if not (left + 0.1 * width <= a <= right - 0.1 * width):
            a = 0.5 * (lo + hi)
        f, g, gtd = phi(a)
        if not armijo(a, f) or f >= f_lo:
            hi, f_hi, g_hi = a, f, gtd
        else:
            if abs(gtd) <= -c2 * gtd0:
                return a, f, g, evals
            if gtd * (hi - lo) >= 0:
                hi, f_hi, g_hi = lo, f_lo, g_lo
            lo, f_lo, g_lo = a, f, gtd
            best = (a, f, g)
    raise LineSearchFailed(f"strong Wolfe conditions not met after {evals} evaluations", best)


def armijo_backtracking(objective, theta, f0, g0, alpha0, c1=1e-4, max_halvings=60):
    """Steepest-descent step with backtracking; ``None`` if no decrease."""
    d = -g0
    gtd0 = float(g0 @ d)
    a = alpha0
    for _ in range(max_halvings):
        x = theta + a * d
        if objective.feasible(x):
            try:
                f, g = objective.value_and_grad(x)
            except (NonFiniteValue, NonFiniteGradient):
                f, g = np.inf, None
            if np.isfinite(f) and f <= f0 + c1 * a * gtd0:
                return a, f, g
        a *= 0.5
    return None


class LBFGS:
    """Limited-memory BFGS with a strong Wolfe line search.

    The first step (and any step after a reset) uses
    ``alpha0 = min(1, 1/|g|_1)``; later steps start at 1.  When the line
    search fails, a steepest-descent step with Armijo backtracking is tried;
    if that also fails the step is reported as not accepted.
    """

    name = "lbfgs"

    def __init__(self, m: int = 10, c1: float = 1e-4, c2: float = 0.9, max_evals: int = 25):
        self.state = LBFGSState(m)
        self.c1, self.c2, self.max_evals = c1, c2, max_evals

    def reset(self) -> None:
        self.state = LBFGSState(self.state.m)

    def direction(self, g) -> np.ndarray:
        return two_loop(self.state, g)

    def step(self, objective, theta, f, g):
        _check_grad(g)
        st = self.state
        gnorm1 = float(np.sum(np.abs(g)))
        if gnorm1 == 0.0:
            return theta, f, g, StepInfo(False)
        d = self.direction(g)
        if float(g @ d) >= 0.0:
            self.reset()
            d = -g
        alpha0 = min(1.0, 1.0 / gnorm1) if not st.s else 1.0
        # inversion guard on the initial trial
        halvings = 0
        while not objective.feasible(theta + alpha0 * d):
            alpha0 *= 0.5
            halvings += 1
            if halvings > MAX_HALVINGS:
                raise ElementInversion(f"no admissible step after {MAX_HALVINGS} halvings")
        info = StepInfo(True, halvings=halvings)
        try:
            alpha, f_new, g_new, evals = strong_wolfe(objective, theta, f, g, d, alpha0, self.c1, self.c2, self.max_evals)
            info.wolfe = True
        except LineSearchFailed as exc:
            evals = self.max_evals
            best = exc.args[1] if len(exc.args) > 1 else None
            if best is not None:
                alpha, f_new, g_new = best
            else:
                res = armijo_backtracking(objective, theta, f, g, min(1.0, 1.0 / gnorm1), self.c1)
                info.fallback = True
                if res is None:
                    info.accepted = False
                    return theta, f, g, info
                alpha, f_new, g_new = res
                d = -g
        info.alpha, info.evals = alpha, evals
        new = theta + alpha * d
        s = new - theta
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            st.s.append(s)
            st.y.append(y)
            if len(st.s) > st.m:
                st.s.pop(0)
                st.y.pop(0)
        st.iterations += 1
        return new, f_new, g_new, info


def lbfgs_step(state: LBFGS, params, loss_fn):
    """Functional wrapper: one L-BFGS iteration on ``loss_fn`` (an objective)."""
    f, g = loss_fn.value_and_grad(params)
    new, f_new, _g, info = state.step(loss_fn, params, f, g)
    return new


def make_optimizer(name: str, **kwargs):
    name = name.lower()
    if name == "adam":
        return Adam(**kwargs)
    if name in ("lbfgs", "l-bfgs"):
        return LBFGS(**kwargs)
    raise ValueError(f"unknown optimizer {name!r}")
