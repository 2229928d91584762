"""Executable theory: metrics, admissible step sizes, potentials, oracles.

Everything the convergence analysis promises about the two tracking loops is
turned into something runnable here:

* per-trace metrics (stationary gap, consensus / estimator / tracking errors),
* the admissible step-size calculator (``theoretical_params_*``) with the
  variance constant ``H`` and the bound constant ``G``,
* the Lyapunov potentials ``lyapunov_omega`` (stochastic loop) and
  ``lyapunov_phi`` (finite-sum loop) whose one-step decrease certifies
  progress in the deterministic regime,
* small enumeration oracles that compute estimator expectations by brute
  force over every sampling outcome, for checking the closed forms, and
* :func:`descent_margins`, which evaluates the two technical inequalities the
  per-step descent argument actually needs.  Note (verified analytically and
  by these margins): the stochastic admissible-``eta`` formula is a factor
  ``sqrt(2)`` too generous for *per-step* descent of the potential — at the
  exact boundary the consensus inequality misses by 3/2.  Any
  ``eta <= eta_max / sqrt(2)`` restores it; the finite-sum constants are
  exact at their boundary.  The averaged convergence bounds are unaffected by
  how we check descent; the margins simply make the regime explicit.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "MetricRow",
    "METRIC_COLUMNS",
    "compute_metrics",
    "stationary_gap",
    "TheoryParams",
    "TheoremBounds",
    "default_theta",
    "h_stochastic",
    "h_finitesum",
    "theoretical_params_stochastic",
    "theoretical_params_finitesum",
    "LyapunovCoeffs",
    "LyapunovError",
    "lyapunov_omega",
    "lyapunov_phi",
    "potential_series",
    "descent_margins",
    "DescentMargins",
    "estimator_expectation_stochastic",
    "estimator_expectation_stochastic_closed",
    "estimator_expectation_finitesum",
    "estimator_expectation_finitesum_closed",
]

METRIC_COLUMNS = (
    "step",
    "epoch",
    "samples",
    "stationary_gap",
    "loss",
    "consensus_err",
    "estimator_err",
    "tracking_err",
)

# enumeration oracles refuse above this many sampling outcomes
_ENUM_LIMIT = 100_000


@dataclass(frozen=True)
class MetricRow:
    """One recorded trace row (column order pinned by ``METRIC_COLUMNS``)."""

    step: int
    epoch: float
    samples: int
    stationary_gap: float
    loss: float
    consensus_err: float
    estimator_err: float
    tracking_err: float


def _x_stack(states) -> np.ndarray:
    if isinstance(states, np.ndarray):
        return states
    return np.stack([st.x for st in states])


def stationary_gap(states, objectives) -> float:
    """``||grad F(x_bar)|| + (1/m) sum_i ||x_bar - x_i||`` (norms, not squares).

    The first term measures stationarity of the network mean, the second the
    consensus violation; both must vanish at a consensus stationary point.
    """
    X = _x_stack(states)
    xbar = X.mean(axis=0)
    grad_f = np.stack([obj.grad(xbar) for obj in objectives]).mean(axis=0)
    consensus = float(np.mean(np.linalg.norm(xbar - X, axis=1)))
    return float(np.linalg.norm(grad_f)) + consensus


def compute_metrics(
    states,
    objectives,
    *,
    step: int,
    epoch: float,
    samples: int,
    estimator_anchor: str = "x",
) -> MetricRow:
    """Assemble one trace row from live node states.

    ``estimator_anchor`` names the state attribute holding the iterate each
    ``u`` estimates the gradient at: the stochastic loop's post-step pair is
    (u, x), the finite-sum loop's is (u, previous x).  Missing estimators or
    trackers (the baseline keeps no tracker) contribute 0.0.
    """
    X = _x_stack(states)
    xbar = X.mean(axis=0)
    gap = stationary_gap(X, objectives)
    loss = float(np.mean([obj.loss(xbar) for obj in objectives]))
    consensus = float(np.mean(np.sum((X - xbar) ** 2, axis=1)))
    us = [st.u for st in states]
    if all(u is not None for u in us):
        anchors = [getattr(st, estimator_anchor) for st in states]
        est = float(
            np.mean(
                [
                    np.sum((u - obj.grad(a)) ** 2)
                    for u, obj, a in zip(us, objectives, anchors)
                ]
            )
        )
    else:
        est = 0.0
    ws = [st.w for st in states]
    if all(w is not None for w in ws):
        W = np.stack(ws)
        tr = float(np.mean(np.sum((W - W.mean(axis=0)) ** 2, axis=1)))
    else:
        tr = 0.0
    return MetricRow(
        step=step,
        epoch=epoch,
        samples=samples,
        stationary_gap=gap,
        loss=loss,
        consensus_err=consensus,
        estimator_err=est,
        tracking_err=tr,
    )


# ---------------------------------------------------------------------------
# Admissible step sizes and bound constants


def default_theta(L: float) -> float:
    """The consensus weight that equalizes the two gamma upper bounds.

    ``rho (1-nu^2) / (48 theta) = 3 rho (1-nu^2) theta / (58 L^2)`` at
    ``theta = L sqrt(58/144)``; any positive theta is admissible, this one
    maximizes the resulting gamma ceiling.
    """
    return float(L) * math.sqrt(58.0 / 144.0)


@dataclass(frozen=True)
class TheoryParams:
    """Problem constants feeding the step-size calculator and potentials.

    L: smoothness constant of every local objective (and its components).
    rho: adaptive diagonal floor (``A_t >= rho I``).
    nu: mixing contraction factor of the topology.
    beta: estimator mixing weight (the constant schedule value ``beta_0``).
    sigma: per-sample gradient noise bound (0 in the deterministic regime).
    theta: consensus weight; defaults to :func:`default_theta`.
    gamma, eta: concrete step sizes, when fixed (otherwise the calculator
        fills in the admissible maxima).
    n, b: component count and batch size (finite-sum loop only).
    f_star: infimum of the global objective, when known.
    M: optional gradient-norm bound (used only by the curvature-pair
        adaptive kind's norm remark ``||A|| <= M + rho``); carried for
        reference, not consumed by the step-size formulas.
    m: node count, carried for reference.
    """

    L: float
    rho: float
    nu: float
    beta: float
    sigma: float = 0.0
    theta: float | None = None
    gamma: float | None = None
    eta: float | None = None
    n: int | None = None
    b: int | None = None
    f_star: float | None = None
    M: float | None = None
    m: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.nu < 1.0:
            raise ValueError(f"nu must lie in [0, 1), got {self.nu}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if self.L <= 0 or self.rho <= 0:
            raise ValueError(f"L and rho must be positive, got L={self.L}, rho={self.rho}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")

    def resolved_theta(self) -> float:
        return default_theta(self.L) if self.theta is None else self.theta

    def with_steps(self, gamma: float, eta: float) -> "TheoryParams":
        return replace(self, gamma=gamma, eta=eta)


@dataclass(frozen=True)
class TheoremBounds:
    """Admissible maxima and bound constants for one loop.

    gamma_max / eta_max: the largest admissible step sizes (eta_max evaluated
    at ``gamma``).  H: per-step variance constant.  G: the horizon-free bound
    constant, present only when its ingredients (f(x_bar_1), f_star, and for
    the finite-sum loop the initial component-gradient energy) are known.
    """

    gamma_max: float
    eta_max: float
    H: float
    gamma: float
    eta: float
    G: float | None = None


def h_stochastic(tp: TheoryParams) -> float:
    """``H = 9/(2 beta) + 8 nu^2 / (1-nu)^2``."""
    return 9.0 / (2.0 * tp.beta) + 8.0 * tp.nu**2 / (1.0 - tp.nu) ** 2


def h_finitesum(tp: TheoryParams) -> float:
    """``H = 9/(b beta) + 6 nu^2/(b (1-nu)^2)
    + (4 n^2 beta^2 / b^3)(9/beta + 9 nu^2/(1-nu)^2) + 3 nu^2/(1-nu)^2``.

    With ``b = sqrt(n)``, ``beta = b/n`` this collapses to
    ``45 + 45 nu^2/(1-nu)^2`` (exactly 45 on a complete graph).
    """
    if tp.n is None or tp.b is None:
        raise ValueError("finite-sum H needs n and b")
    n, b, beta, nu = tp.n, tp.b, tp.beta, tp.nu
    shift = nu**2 / (1.0 - nu) ** 2
    return (
        9.0 / (b * beta)
        + 6.0 * shift / b
        + (4.0 * n**2 * beta**2 / b**3) * (9.0 / beta + 9.0 * shift)
        + 3.0 * shift
    )


def _gamma_max(tp: TheoryParams) -> float:
    theta = tp.resolved_theta()
    one = tp.rho * (1.0 - tp.nu**2) / (48.0 * theta)
    two = 3.0 * tp.rho * (1.0 - tp.nu**2) * theta / (58.0 * tp.L**2)
    return min(one, two)


def theoretical_params_stochastic(
    tp: TheoryParams, *, f_bar1: float | None = None
) -> TheoremBounds:
    """Admissible (gamma, eta), H, and G for the stochastic loop.

    ``eta_max = min( rho sqrt(1-nu^2) / (4 L gamma sqrt(3(1+nu^2)) sqrt(H)),
    sqrt(rho (1-nu^2) theta) / (2 L sqrt(gamma (3+nu^2)) sqrt(H)) )``
    evaluated at ``tp.gamma`` if fixed, else at ``gamma_max``.

    ``G = (f(x_bar_1) - f_star)/(rho gamma eta)
    + (4 nu^2/(rho^2 (1-nu)) + 9/(2 rho^2 beta) - 9/(2 rho^2)) sigma^2``,
    computed when ``f_bar1`` and ``tp.f_star`` are both known.
    """
    H = h_stochastic(tp)
    theta = tp.resolved_theta()
    g_max = _gamma_max(tp)
    gamma = tp.gamma if tp.gamma is not None else g_max
    nu2 = tp.nu**2
    e1 = tp.rho * math.sqrt(1.0 - nu2) / (
        4.0 * tp.L * gamma * math.sqrt(3.0 * (1.0 + nu2)) * math.sqrt(H)
    )
    e2 = math.sqrt(tp.rho * (1.0 - nu2) * theta) / (
        2.0 * tp.L * math.sqrt(gamma * (3.0 + nu2)) * math.sqrt(H)
    )
    eta_max = min(e1, e2, 1.0)
    eta = tp.eta if tp.eta is not None else eta_max
    G = None
    if f_bar1 is not None and tp.f_star is not None:
        G = (f_bar1 - tp.f_star) / (tp.rho * gamma * eta) + (
            4.0 * nu2 / (tp.rho**2 * (1.0 - tp.nu))
            + 9.0 / (2.0 * tp.rho**2 * tp.beta)
            - 9.0 / (2.0 * tp.rho**2)
        ) * tp.sigma**2
    return TheoremBounds(gamma_max=g_max, eta_max=eta_max, H=H, gamma=gamma, eta=eta, G=G)


def theoretical_params_finitesum(
    tp: TheoryParams, *, f_bar1: float | None = None, grad0_sq: float | None = None
) -> TheoremBounds:
    """Admissible (gamma, eta), H, and G for the finite-sum loop.

    ``eta_max = min( rho sqrt(1-nu^2) / (2 L gamma sqrt(6(1+nu^2)) sqrt(H)),
    sqrt(rho (1-nu^2) theta) / (2 L sqrt(gamma (3+nu^2)) sqrt(H)) )``.

    ``G`` additionally needs ``grad0_sq``, the initial component-gradient
    energy ``(1/m) sum_i (1/n) sum_k ||grad f_ik(x_0)||^2``.
    """
    H = h_finitesum(tp)
    theta = tp.resolved_theta()
    g_max = _gamma_max(tp)
    gamma = tp.gamma if tp.gamma is not None else g_max
    nu2 = tp.nu**2
    e1 = tp.rho * math.sqrt(1.0 - nu2) / (
        2.0 * tp.L * gamma * math.sqrt(6.0 * (1.0 + nu2)) * math.sqrt(H)
    )
    e2 = math.sqrt(tp.rho * (1.0 - nu2) * theta) / (
        2.0 * tp.L * math.sqrt(gamma * (3.0 + nu2)) * math.sqrt(H)
    )
    eta_max = min(e1, e2, 1.0)
    eta = tp.eta if tp.eta is not None else eta_max
    G = None
    if f_bar1 is not None and tp.f_star is not None and grad0_sq is not None:
        shift = nu2 / (1.0 - tp.nu) ** 2
        G = (f_bar1 - tp.f_star) / (tp.rho * gamma * eta) + (
            18.0 * tp.beta / tp.rho**2
            + 18.0 * tp.beta**2 * shift / tp.rho**2
            + 3.0 * shift / tp.rho**2
            + 9.0 / (2.0 * tp.rho**2 * tp.beta)
            - 9.0 / (2.0 * tp.rho**2)
        ) * grad0_sq
    return TheoremBounds(gamma_max=g_max, eta_max=eta_max, H=H, gamma=gamma, eta=eta, G=G)


# ---------------------------------------------------------------------------
# Lyapunov potentials


class LyapunovError(ValueError):
    """A potential coefficient violates its floor."""


@dataclass(frozen=True)
class LyapunovCoeffs:
    """Potential coefficients (constant schedules).

    Floors (enforced by the potentials): ``lambda_ >= 9 gamma eta / (2 rho)``,
    ``theta >= 29 gamma eta L^2 / (6 rho)``, ``chi >= 0``, ``alpha >= 0``, and
    ``vartheta >= gamma eta/(4 rho)`` (stochastic) respectively
    ``>= 3 gamma eta/(4 rho)`` (finite-sum).
    """

    lambda_: float
    chi: float
    theta: float
    vartheta: float
    alpha: float | None = None

    @classmethod
    def stochastic(cls, tp: TheoryParams) -> "LyapunovCoeffs":
        """The schedule the stochastic descent proof telescopes with:
        ``lambda = 9 gamma eta/(2 rho beta)``, ``vartheta = gamma eta/(rho(1-nu))``,
        ``chi = 4 vartheta nu^2/(1-nu)``, constant theta.

        These satisfy ``lambda + chi + 4 vartheta nu^2/(1-nu)
        = (gamma eta / rho) H`` exactly.
        """
        ge = _steps(tp)
        lam = 9.0 * ge / (2.0 * tp.rho * tp.beta)
        vt = ge / (tp.rho * (1.0 - tp.nu))
        chi = 4.0 * vt * tp.nu**2 / (1.0 - tp.nu)
        return cls(lambda_=lam, chi=chi, theta=tp.resolved_theta(), vartheta=vt)

    @classmethod
    def finitesum(cls, tp: TheoryParams) -> "LyapunovCoeffs":
        """Finite-sum schedule: same ``lambda`` and ``vartheta``,
        ``chi = 3 vartheta nu^2/(1-nu)``, and table coefficient
        ``alpha = (2 n beta^2 / b^2)(2 lambda + 9 vartheta nu^2/(1-nu))``.

        These satisfy ``2 lambda/b + 2 chi/b + 2 alpha n/b
        + 3 vartheta nu^2/(1-nu) = (gamma eta / rho) H`` exactly.
        """
        if tp.n is None or tp.b is None:
            raise ValueError("finite-sum coefficients need n and b")
        ge = _steps(tp)
        lam = 9.0 * ge / (2.0 * tp.rho * tp.beta)
        vt = ge / (tp.rho * (1.0 - tp.nu))
        chi = 3.0 * vt * tp.nu**2 / (1.0 - tp.nu)
        alpha = (2.0 * tp.n * tp.beta**2 / tp.b**2) * (
            2.0 * lam + 9.0 * vt * tp.nu**2 / (1.0 - tp.nu)
        )
        return cls(lambda_=lam, chi=chi, theta=tp.resolved_theta(), vartheta=vt, alpha=alpha)


def _steps(tp: TheoryParams) -> float:
    if tp.gamma is None or tp.eta is None:
        raise ValueError("potentials need concrete gamma and eta (TheoryParams.with_steps)")
    return tp.gamma * tp.eta


_TOL = 1.0 + 1e-12


def _check_floors(
    coeffs: LyapunovCoeffs, tp: TheoryParams, *, vartheta_floor: float, needs_alpha: bool
) -> None:
    ge = _steps(tp)
    lam_floor = 9.0 * ge / (2.0 * tp.rho)
    theta_floor = 29.0 * ge * tp.L**2 / (6.0 * tp.rho)
    if coeffs.lambda_ * _TOL < lam_floor:
        raise LyapunovError(
            f"lambda={coeffs.lambda_} below its floor 9*gamma*eta/(2*rho)={lam_floor}"
        )
    if coeffs.theta * _TOL < theta_floor:
        raise LyapunovError(
            f"theta={coeffs.theta} below its floor 29*gamma*eta*L^2/(6*rho)={theta_floor}"
        )
    if coeffs.vartheta * _TOL < vartheta_floor:
        raise LyapunovError(
            f"vartheta={coeffs.vartheta} below its floor {vartheta_floor}"
        )
    if coeffs.chi < 0:
        raise LyapunovError(f"chi={coeffs.chi} must be nonnegative")
    if needs_alpha and (coeffs.alpha is None or coeffs.alpha < 0):
        raise LyapunovError("finite-sum potential needs a nonnegative alpha")


def _mean_sq(rows: np.ndarray) -> float:
    return float(np.mean(np.sum(rows**2, axis=1)))


def lyapunov_omega(
    curr,
    prev,
    objectives,
    coeffs: LyapunovCoeffs,
    tp: TheoryParams,
    *,
    penalty: str = "printed",
) -> float:
    """Potential of the stochastic loop at time t.

    ``curr``/``prev`` are consecutive snapshots (after t and t-1 steps): the
    loss term is evaluated at ``curr.x``'s mean; the estimator/consensus/
    tracking penalties at ``prev``; the direction term uses ``curr.g`` — the
    preconditioned direction computed while moving from ``prev`` to ``curr``.

    ``penalty`` picks the printed subtraction constants of the definition
    (consensus ``19 gamma eta L^2/(4 rho)``, tracking ``gamma eta/(4 rho)``)
    or the ``"telescoped"`` constants the one-step recursion actually cancels
    (``29 gamma eta L^2/(6 rho)``, ``3 gamma eta/(4 rho)``); both are
    implemented because the definition and the recursion are printed with
    different constants.  With coefficients at their floors the telescoped
    variant reduces exactly to loss + direction term; the printed variant
    keeps a residual ``gamma eta L^2/(12 rho)`` times the consensus error.
    """
    ge = _steps(tp)
    _check_floors(coeffs, tp, vartheta_floor=ge / (4.0 * tp.rho), needs_alpha=False)
    if penalty == "printed":
        c_theta = 19.0 * ge * tp.L**2 / (4.0 * tp.rho)
        c_vt = ge / (4.0 * tp.rho)
    elif penalty == "telescoped":
        c_theta = 29.0 * ge * tp.L**2 / (6.0 * tp.rho)
        c_vt = 3.0 * ge / (4.0 * tp.rho)
    else:
        raise ValueError(f"penalty must be 'printed' or 'telescoped', got {penalty!r}")
    xbar = curr.x.mean(axis=0)
    loss = float(np.mean([obj.loss(xbar) for obj in objectives]))
    grads_prev = np.stack([obj.grad(prev.x[i]) for i, obj in enumerate(objectives)])
    mean_est = float(np.sum((prev.u.mean(axis=0) - grads_prev.mean(axis=0)) ** 2))
    node_est = _mean_sq(prev.u - grads_prev)
    consensus = _mean_sq(prev.x - prev.x.mean(axis=0))
    tracking = _mean_sq(prev.w - prev.w.mean(axis=0))
    direction = _mean_sq(curr.g)
    return (
        loss
        + (coeffs.lambda_ - 9.0 * ge / (2.0 * tp.rho)) * mean_est
        + coeffs.chi * node_est
        + (coeffs.theta - c_theta) * consensus
        + (coeffs.vartheta - c_vt) * tracking
        + tp.rho * ge / 6.0 * direction
    )


def lyapunov_phi(
    curr,
    prev,
    objectives,
    coeffs: LyapunovCoeffs,
    tp: TheoryParams,
    *,
    penalty: str = "printed",
) -> float:
    """Potential of the finite-sum loop at time t.

    The finite-sum loop's post-step state pairs ``x_{t+1}`` with
    ``(u_t, w_t, z_t, g_t)``, so here ``curr`` is the snapshot after step t-1
    (whose ``x`` is x_t and whose u/w/z/g carry index t-1) and ``prev`` the
    snapshot before it (providing x_{t-1}); for t = 1 pass the initial
    snapshot as both.  ``penalty`` as in :func:`lyapunov_omega`; the tracking
    constant is ``3 gamma eta/(4 rho)`` in both variants here.
    """
    ge = _steps(tp)
    _check_floors(coeffs, tp, vartheta_floor=3.0 * ge / (4.0 * tp.rho), needs_alpha=True)
    if penalty == "printed":
        c_theta = 19.0 * ge * tp.L**2 / (4.0 * tp.rho)
    elif penalty == "telescoped":
        c_theta = 29.0 * ge * tp.L**2 / (6.0 * tp.rho)
    else:
        raise ValueError(f"penalty must be 'printed' or 'telescoped', got {penalty!r}")
    c_vt = 3.0 * ge / (4.0 * tp.rho)
    xbar = curr.x.mean(axis=0)
    loss = float(np.mean([obj.loss(xbar) for obj in objectives]))
    grads_prev = np.stack([obj.grad(prev.x[i]) for i, obj in enumerate(objectives)])
    mean_est = float(np.sum((curr.u.mean(axis=0) - grads_prev.mean(axis=0)) ** 2))
    node_est = _mean_sq(curr.u - grads_prev)
    table = 0.0
    for i, obj in enumerate(objectives):
        comp = obj.component_grads(prev.x[i], np.arange(obj.n))
        table += float(np.mean(np.sum((comp - curr.z[i]) ** 2, axis=1)))
    table /= len(objectives)
    consensus = _mean_sq(prev.x - prev.x.mean(axis=0))
    tracking = _mean_sq(curr.w - curr.w.mean(axis=0))
    direction = _mean_sq(curr.g)
    return (
        loss
        + (coeffs.lambda_ - 9.0 * ge / (2.0 * tp.rho)) * mean_est
        + coeffs.chi * node_est
        + coeffs.alpha * table
        + (coeffs.theta - c_theta) * consensus
        + (coeffs.vartheta - c_vt) * tracking
        + tp.rho * ge / 6.0 * direction
    )


def potential_series(
    snapshots,
    objectives,
    coeffs: LyapunovCoeffs,
    tp: TheoryParams,
    algorithm: str,
    *,
    penalty: str = "printed",
) -> np.ndarray:
    """Potential values for t = 1..T from a run's snapshot list.

    ``snapshots[0]`` is the initial state; element k the state after k steps.
    The stochastic potential at t pairs snapshots (t, t-1); the finite-sum
    one pairs (t-1, t-2) because its post-step state already lags (the t = 1
    value uses the initial snapshot twice, exploiting x_1 = x_0).
    """
    T = len(snapshots) - 1
    vals = np.empty(T)
    if algorithm == "adamdos":
        for t in range(1, T + 1):
            vals[t - 1] = lyapunov_omega(
                snapshots[t], snapshots[t - 1], objectives, coeffs, tp, penalty=penalty
            )
    elif algorithm == "adamdof":
        for t in range(1, T + 1):
            curr = snapshots[t - 1]
            prev = snapshots[t - 2] if t >= 2 else snapshots[0]
            vals[t - 1] = lyapunov_phi(curr, prev, objectives, coeffs, tp, penalty=penalty)
    else:
        raise ValueError(f"no potential defined for algorithm {algorithm!r}")
    return vals


# ---------------------------------------------------------------------------
# Descent-regime margins


@dataclass(frozen=True)
class DescentMargins:
    """Slack in the two technical inequalities behind per-step descent.

    ``consensus``: slack of
    ``theta(1 - (1-nu^2) eta / 2) + c L^2 eta^2 (3+nu^2) K <=
    theta - 29 gamma eta L^2/(6 rho)``, and ``direction``: slack of
    ``4 theta eta gamma^2/(1-nu^2) + 2c (1+nu^2) L^2 eta^2 gamma^2 K/(1-nu^2)
    <= rho gamma eta / 6``, where K is the coefficient aggregate
    (c = 2 for the stochastic loop, 1 for the finite-sum loop).
    ``smoothness_step``: slack of the loss-descent side condition
    ``gamma <= rho/(4 L eta)``.  All nonnegative means the one-step decrease
    argument goes through at these exact parameters.
    """

    consensus: float
    direction: float
    smoothness_step: float

    @property
    def ok(self) -> bool:
        return self.consensus >= 0 and self.direction >= 0 and self.smoothness_step >= 0


def descent_margins(tp: TheoryParams, coeffs: LyapunovCoeffs, algorithm: str) -> DescentMargins:
    ge = _steps(tp)
    gamma, eta = tp.gamma, tp.eta
    nu, nu2 = tp.nu, tp.nu**2
    theta = coeffs.theta
    if algorithm == "adamdos":
        K = coeffs.lambda_ + coeffs.chi + 4.0 * coeffs.vartheta * nu2 / (1.0 - nu)
        c = 2.0
    elif algorithm == "adamdof":
        if coeffs.alpha is None or tp.b is None or tp.n is None:
            raise ValueError("finite-sum margins need alpha, n, and b")
        K = (
            2.0 * coeffs.lambda_ / tp.b
            + 2.0 * coeffs.chi / tp.b
            + 2.0 * coeffs.alpha * tp.n / tp.b
            + 3.0 * coeffs.vartheta * nu2 / (1.0 - nu)
        )
        c = 1.0
    else:
        raise ValueError(f"no descent margins for algorithm {algorithm!r}")
    lhs1 = theta * (1.0 - (1.0 - nu2) * eta / 2.0) + c * tp.L**2 * eta**2 * (3.0 + nu2) * K
    rhs1 = theta - 29.0 * ge * tp.L**2 / (6.0 * tp.rho)
    lhs2 = (
        4.0 * theta * eta * gamma**2 / (1.0 - nu2)
        + 2.0 * c * (1.0 + nu2) * tp.L**2 * eta**2 * gamma**2 * K / (1.0 - nu2)
    )
    rhs2 = tp.rho * ge / 6.0
    return DescentMargins(
        consensus=rhs1 - lhs1,
        direction=rhs2 - lhs2,
        smoothness_step=tp.rho / (4.0 * tp.L * eta) - gamma,
    )


# ---------------------------------------------------------------------------
# Enumeration oracles for the estimator expectations


def estimator_expectation_stochastic(
    objective,
    x_next: np.ndarray,
    x_curr: np.ndarray,
    u_curr: np.ndarray,
    beta: float,
    probabilities: np.ndarray | None = None,
) -> np.ndarray:
    """Brute-force ``E[u_next]`` over every sampling outcome.

    The sample index is drawn from the objective's components (uniformly, or
    with the given outcome probabilities); each outcome contributes
    ``g_k(x_next) + (1-beta)(u - g_k(x_curr))``.
    """
    n = objective.n
    if n > _ENUM_LIMIT:
        raise ValueError(f"refusing to enumerate {n} outcomes (> {_ENUM_LIMIT})")
    p = np.full(n, 1.0 / n) if probabilities is None else np.asarray(probabilities, float)
    if p.shape != (n,) or abs(float(p.sum()) - 1.0) > 1e-12 or np.any(p < 0):
        raise ValueError("probabilities must be a length-n distribution")
    acc = np.zeros_like(np.asarray(x_next, dtype=float))
    for k in range(n):
        gk_next = objective.component_grad(x_next, k)
        gk_curr = objective.component_grad(x_curr, k)
        acc = acc + p[k] * (gk_next + (1.0 - beta) * (u_curr - gk_curr))
    return acc


def estimator_expectation_stochastic_closed(
    objective,
    x_next: np.ndarray,
    x_curr: np.ndarray,
    u_curr: np.ndarray,
    beta: float,
    probabilities: np.ndarray | None = None,
) -> np.ndarray:
    """Closed form ``E[u_next] = g(x_next) + (1-beta)(u - g(x_curr))`` with
    ``g`` the probability-weighted mean gradient."""
    n = objective.n
    p = np.full(n, 1.0 / n) if probabilities is None else np.asarray(probabilities, float)
    idx = np.arange(n)
    g_next = (p[:, None] * objective.component_grads(x_next, idx)).sum(axis=0)
    g_curr = (p[:, None] * objective.component_grads(x_curr, idx)).sum(axis=0)
    return g_next + (1.0 - beta) * (u_curr - g_curr)


def estimator_expectation_finitesum(
    objective,
    x_curr: np.ndarray,
    x_prev: np.ndarray,
    u_prev: np.ndarray,
    z_table: np.ndarray,
    beta: float,
    b: int,
) -> np.ndarray:
    """Brute-force ``E[u_t]`` over every size-b index set (without replacement)."""
    n = objective.n
    total = math.comb(n, b)
    if total > _ENUM_LIMIT:
        raise ValueError(f"refusing to enumerate {total} index sets (> {_ENUM_LIMIT})")
    idx = np.arange(n)
    gc = objective.component_grads(x_curr, idx)
    gp = objective.component_grads(x_prev, idx)
    z_bar = z_table.mean(axis=0)
    acc = np.zeros_like(np.asarray(x_curr, dtype=float))
    for batch in itertools.combinations(range(n), b):
        sel = np.array(batch)
        fresh = (gc[sel] - gp[sel]).mean(axis=0)
        table_gap = (gp[sel] - z_table[sel]).mean(axis=0)
        acc = acc + fresh + (1.0 - beta) * u_prev + beta * (table_gap + z_bar)
    return acc / total


def estimator_expectation_finitesum_closed(
    objective,
    x_curr: np.ndarray,
    x_prev: np.ndarray,
    u_prev: np.ndarray,
    z_table: np.ndarray,
    beta: float,
    b: int,
) -> np.ndarray:
    """Closed form ``E[u_t] = g(x_t) + (1-beta)(u_prev - g(x_prev))``: the
    table's selected-minus-mean correction is unbiased, so z drops out."""
    del z_table, b  # unbiasedness removes both from the mean
    return objective.grad(x_curr) + (1.0 - beta) * (u_prev - objective.grad(x_prev))
