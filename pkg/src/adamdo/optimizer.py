"""Decentralized optimizer loops: adaptive momentum tracking and a baseline.

Two closely related loops share the same skeleton — gossip the iterates,
take a locally preconditioned step along a gradient-tracked direction, relax
with a momentum parameter, refresh a variance-reduced gradient estimator, and
gossip the tracking correction:

* ``adamdos`` — the stochastic-sampling loop.  Each node-step draws exactly
  one fresh sample and evaluates its gradient at both the new and the current
  iterate (two evaluations, one draw); the recursive estimator
  ``u_{t+1} = g(x_{t+1}) + (1-beta)(u_t - g(x_t))`` reuses that pair.
* ``adamdof`` — the finite-sum loop.  Each node-step draws a size-``b``
  minibatch without replacement, evaluates its component gradients at the
  current and previous iterates (2b evaluations), corrects with a stored
  per-component gradient table ``z`` (updated incrementally, O(b d) per
  step), and mixes tracking the same way.
* ``dpsgd`` — plain decentralized SGD, the non-tracked baseline.

Structural identities maintained every step (and asserted in tests):
the node mean of the trackers equals the node mean of the estimators, and
with exact per-step gradients the estimators equal the local gradients.

Determinism: every node owns a counter-based Philox stream keyed by
(seed, role, node), all cross-node reductions run in ascending node order,
and gossip mixes act as barriers between the per-node phases — so traces are
byte-identical for any worker count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .adaptive import Preconditioner, make_preconditioner
from .diagnostics import MetricRow, compute_metrics
from .objective import Objective, draw_minibatch
from .topology import MixingMatrix

__all__ = [
    "ALGORITHMS",
    "HyperParams",
    "NodeState",
    "Snapshot",
    "RunResult",
    "DivergenceError",
    "adamdos_init",
    "adamdos_step",
    "adamdof_init",
    "adamdof_step",
    "dpsgd_init",
    "dpsgd_step",
    "run",
    "take_snapshot",
    "choose_uniform_iterate",
    "default_x0",
]

ALGORITHMS = ("adamdos", "adamdof", "dpsgd")

# Philox stream tags; the data side (objective.py) uses tags 0-2.
_STREAM_NODE_OPT = 10
_STREAM_OUTPUT_CHOICE = 11

_DEFAULT_X0_SCALE = 0.01


def _philox(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=key))
    )


def default_x0(dim: int) -> np.ndarray:
    """The common starting point every node shares: 0.01 * ones."""
    return np.full(dim, _DEFAULT_X0_SCALE)


@dataclass
class HyperParams:
    """Step sizes and schedule constants shared by all nodes.

    gamma: base step size (> 0).
    eta: momentum relaxation in (0, 1]; 1 recovers the unrelaxed update.
    beta: estimator mixing weight in (0, 1]; 1 disables the momentum
        correction (the estimator becomes the fresh gradient).
    varrho: EMA decay for the adam-like adaptive kind, in (0, 1).
    rho: adaptive diagonal floor (> 0).
    batch: minibatch size (>= 1; validated against n at init time).  Every
        loop draws one size-b index set per step; the stochastic loop's
        default of 1 is the single-sample recursion.
    T: number of steps (>= 0).
    """

    gamma: float
    eta: float = 0.9
    beta: float = 0.9
    varrho: float = 0.9
    rho: float = 1e-3
    batch: int = 1
    T: int = 1000

    def __post_init__(self) -> None:
        problems = []
        if not self.gamma > 0:
            problems.append(f"gamma must be positive, got {self.gamma}")
        if not 0.0 < self.eta <= 1.0:
            problems.append(f"eta must lie in (0, 1], got {self.eta}")
        if not 0.0 < self.beta <= 1.0:
            problems.append(f"beta must lie in (0, 1], got {self.beta}")
        if not 0.0 < self.varrho < 1.0:
            problems.append(f"varrho must lie in (0, 1), got {self.varrho}")
        if not self.rho > 0:
            problems.append(f"rho must be positive, got {self.rho}")
        if self.batch < 1:
            problems.append(f"batch must be at least 1, got {self.batch}")
        if self.T < 0:
            problems.append(f"T must be nonnegative, got {self.T}")
        if problems:
            raise ValueError("; ".join(problems))


@dataclass
class NodeState:
    """One node's live state.

    ``u`` estimates the local gradient at ``u_anchor()`` (the stochastic loop
    anchors at the current iterate, the finite-sum loop at the previous one);
    ``w`` tracks the network mean of the estimators; ``g`` is the
    preconditioned direction ``A^{-1} w`` used by the most recent step.
    """

    node_id: int
    x: np.ndarray
    rng: np.random.Generator
    adaptive: Preconditioner
    u: np.ndarray | None = None
    w: np.ndarray | None = None
    g: np.ndarray | None = None
    x_tilde: np.ndarray | None = None
    x_prev: np.ndarray | None = None
    # cached same-sample gradient pair feeding the adaptive update
    fresh_grad: np.ndarray | None = None
    fresh_grad_prev: np.ndarray | None = None
    # finite-sum component-gradient table and its running sum
    z_table: np.ndarray | None = None
    z_sum: np.ndarray | None = None
    last_indices: np.ndarray | None = None
    # counters
    samples_drawn: int = 0  # index draws consumed by steps
    init_samples: int = 0  # draws consumed by initialization
    grad_evals: int = 0
    # scratch used between the phases of one step
    _mb_cur: np.ndarray | None = field(default=None, repr=False)
    _mb_prev: np.ndarray | None = field(default=None, repr=False)
    _grads_cur: np.ndarray | None = field(default=None, repr=False)


@dataclass(frozen=True)
class Snapshot:
    """Frozen copy of the network state after some number of steps.

    ``g`` is the preconditioned direction of the step that *produced* this
    state (the stochastic loop computes ``A_t^{-1} w_t`` while moving from
    ``x_t`` to ``x_{t+1}``), which is exactly the alignment the potential
    functions need.  ``z`` is the stacked component-gradient table when the
    algorithm keeps one.
    """

    x: np.ndarray
    u: np.ndarray | None
    w: np.ndarray | None
    g: np.ndarray | None
    z: np.ndarray | None = None


class DivergenceError(RuntimeError):
    """An iterate, estimator, or tracker became non-finite."""

    def __init__(self, node: int, step: int) -> None:
        super().__init__(f"divergence at node {node}, step {step}: non-finite state")
        self.node = node
        self.step = step
        self.trace: list[MetricRow] = []


@dataclass
class RunResult:
    """Trace plus final state and the exact sampling/evaluation counters."""

    trace: list[MetricRow]
    states: list[NodeState]
    samples_per_node: list[int]
    init_samples_per_node: list[int]
    grad_evals_per_node: list[int]
    snapshots: list[Snapshot] | None = None


def _stack(states: list[NodeState], attr: str) -> np.ndarray:
    return np.stack([getattr(st, attr) for st in states])


def take_snapshot(states: list[NodeState], *, with_z: bool = False) -> Snapshot:
    def opt(attr):
        vals = [getattr(st, attr) for st in states]
        if any(v is None for v in vals):
            return None
        return np.stack([np.array(v, copy=True) for v in vals])

    z = None
    if with_z and all(st.z_table is not None for st in states):
        z = np.stack([np.array(st.z_table, copy=True) for st in states])
    return Snapshot(x=opt("x"), u=opt("u"), w=opt("w"), g=opt("g"), z=z)


def _map_nodes(pool: ThreadPoolExecutor | None, fn, m: int) -> None:
    if pool is None:
        for i in range(m):
            fn(i)
    else:
        # list() propagates the first exception, same as the serial loop
        list(pool.map(fn, range(m)))


def _check_finite(states: list[NodeState], step: int) -> None:
    for st in states:
        arrays = [st.x] + [a for a in (st.u, st.w) if a is not None]
        if not all(np.isfinite(a).all() for a in arrays):
            raise DivergenceError(st.node_id, step)


def _validate_problem(objectives: list[Objective], W: MixingMatrix) -> int:
    if len(objectives) != W.m:
        raise ValueError(f"{len(objectives)} objectives for {W.m} network nodes")
    dims = {obj.dim for obj in objectives}
    if len(dims) != 1:
        raise ValueError(f"objectives disagree on dimension: {sorted(dims)}")
    ns = {obj.n for obj in objectives}
    if len(ns) != 1:
        raise ValueError(f"objectives disagree on component count: {sorted(ns)}")
    return dims.pop()


# ---------------------------------------------------------------------------
# Stochastic-sampling loop


def adamdos_init(
    objectives: list[Objective],
    W: MixingMatrix,
    hp: HyperParams,
    seed: int,
    *,
    adaptive: str = "adam",
    x0: np.ndarray | None = None,
) -> list[NodeState]:
    """Common start, one estimator minibatch per node, one tracking gossip.

    Each node draws one init minibatch, sets ``u_0`` to its gradient, and the
    trackers start at ``w_0 = mix(u_0)`` — so the tracking identity (node
    mean of w equals node mean of u) holds from the very first state.
    """
    d = _validate_problem(objectives, W)
    n = objectives[0].n
    if not 1 <= hp.batch <= n:
        raise ValueError(f"batch must satisfy 1 <= b <= n, got b={hp.batch}, n={n}")
    x_init = default_x0(d) if x0 is None else np.asarray(x0, dtype=float).copy()
    states = []
    for i, obj in enumerate(objectives):
        rng = _philox(seed, _STREAM_NODE_OPT, i)
        idx = draw_minibatch(rng, obj.n, hp.batch)
        g0 = obj.minibatch_grad(x_init, idx)
        states.append(
            NodeState(
                node_id=i,
                x=x_init.copy(),
                rng=rng,
                adaptive=make_preconditioner(adaptive, d, hp.rho, hp.varrho),
                u=g0,
                fresh_grad=g0,
                init_samples=hp.batch,
                grad_evals=hp.batch,
            )
        )
    mixed_u = W.weights @ _stack(states, "u")
    for i, st in enumerate(states):
        st.w = mixed_u[i]
    return states


def adamdos_step(
    states: list[NodeState],
    W: MixingMatrix,
    hp: HyperParams,
    objectives: list[Objective],
    t: int,
    pool: ThreadPoolExecutor | None = None,
) -> None:
    """One synchronous step of the stochastic loop (t counts from 0).

    Order per node: refresh the adaptive matrix from the cached
    current-sample gradient; gossip iterates and move along ``A^{-1} w``;
    relax with eta; draw ONE fresh minibatch and evaluate its gradient at
    the new and old iterate; update the recursive estimator; finally gossip
    the tracking correction.  Exactly one fresh draw of b indices and 2b
    evaluations per node (b defaults to 1: the single-sample recursion).
    """
    m = len(states)
    mixed_x = W.weights @ _stack(states, "x")
    u_new: list[np.ndarray | None] = [None] * m
    u_old: list[np.ndarray | None] = [None] * m

    def phase(i: int) -> None:
        st = states[i]
        obj = objectives[i]
        st.adaptive.update(
            st.fresh_grad, x=st.x, x_prev=st.x_prev, grad_prev=st.fresh_grad_prev
        )
        st.g = st.adaptive.apply_inverse(st.w)
        st.x_tilde = mixed_x[i] - hp.gamma * st.g
        x_next = st.x + hp.eta * (st.x_tilde - st.x)
        idx = draw_minibatch(st.rng, obj.n, hp.batch)
        st.samples_drawn += hp.batch
        g_new = obj.minibatch_grad(x_next, idx)
        g_old = obj.minibatch_grad(st.x, idx)
        st.grad_evals += 2 * hp.batch
        u_old[i] = st.u
        u_new[i] = g_new + (1.0 - hp.beta) * (st.u - g_old)
        st.x_prev = st.x
        st.x = x_next
        # the same-sample pair; feeds both the next adaptive update and a
        # curvature-pair kind, which needs both gradients on one sample
        st.fresh_grad = g_new
        st.fresh_grad_prev = g_old

    _map_nodes(pool, phase, m)
    correction = np.stack([states[i].w + u_new[i] - u_old[i] for i in range(m)])
    mixed_w = W.weights @ correction
    for i, st in enumerate(states):
        st.u = u_new[i]
        st.w = mixed_w[i]
    _check_finite(states, t)


# ---------------------------------------------------------------------------
# Finite-sum loop


def adamdof_init(
    objectives: list[Objective],
    W: MixingMatrix,
    hp: HyperParams,
    seed: int,
    *,
    adaptive: str = "adam",
    x0: np.ndarray | None = None,
) -> list[NodeState]:
    """Zero estimators/trackers/tables; previous iterate equals the start."""
    d = _validate_problem(objectives, W)
    n = objectives[0].n
    if not 1 <= hp.batch <= n:
        raise ValueError(f"batch must satisfy 1 <= b <= n, got b={hp.batch}, n={n}")
    x_init = default_x0(d) if x0 is None else np.asarray(x0, dtype=float).copy()
    states = []
    for i, obj in enumerate(objectives):
        states.append(
            NodeState(
                node_id=i,
                x=x_init.copy(),
                x_prev=x_init.copy(),
                rng=_philox(seed, _STREAM_NODE_OPT, i),
                adaptive=make_preconditioner(adaptive, d, hp.rho, hp.varrho),
                u=np.zeros(d),
                w=np.zeros(d),
                g=np.zeros(d),
                z_table=np.zeros((n, d)),
                z_sum=np.zeros(d),
            )
        )
    return states


def adamdof_step(
    states: list[NodeState],
    W: MixingMatrix,
    hp: HyperParams,
    objectives: list[Objective],
    t: int,
    pool: ThreadPoolExecutor | None = None,
) -> None:
    """One synchronous step of the finite-sum loop (t counts from 1).

    Per node: draw a size-b minibatch without replacement; evaluate its
    component gradients at the current and previous iterates (2b
    evaluations, reused by both the estimator and the adaptive update);
    combine the fresh difference, the carried estimator, and the stored
    table correction; gossip tracking; precondition and step; relax; write
    the fresh current-iterate gradients back into the table incrementally.
    """
    m = len(states)
    b = hp.batch
    u_new: list[np.ndarray | None] = [None] * m
    u_old: list[np.ndarray | None] = [None] * m

    def phase_draw(i: int) -> None:
        st = states[i]
        obj = objectives[i]
        idx = draw_minibatch(st.rng, obj.n, b)
        st.samples_drawn += b
        grads_cur = obj.component_grads(st.x, idx)
        grads_prev = obj.component_grads(st.x_prev, idx)
        st.grad_evals += 2 * b
        fresh_diff = (grads_cur - grads_prev).mean(axis=0)
        table_gap = (grads_prev - st.z_table[idx]).mean(axis=0)
        z_bar = st.z_sum / obj.n
        u_old[i] = st.u
        u_new[i] = fresh_diff + (1.0 - hp.beta) * st.u + hp.beta * (table_gap + z_bar)
        st.last_indices = idx
        st._grads_cur = grads_cur
        st._mb_cur = grads_cur.mean(axis=0)
        st._mb_prev = grads_prev.mean(axis=0)

    _map_nodes(pool, phase_draw, m)
    correction = np.stack([states[i].w + u_new[i] - u_old[i] for i in range(m)])
    mixed_w = W.weights @ correction
    mixed_x = W.weights @ _stack(states, "x")

    def phase_move(i: int) -> None:
        st = states[i]
        st.u = u_new[i]
        st.w = mixed_w[i]
        # minibatch means at both iterates share the drawn indices: exactly
        # the signal pair the adaptive kinds expect
        st.adaptive.update(st._mb_cur, x=st.x, x_prev=st.x_prev, grad_prev=st._mb_prev)
        st.g = st.adaptive.apply_inverse(st.w)
        st.x_tilde = mixed_x[i] - hp.gamma * st.g
        x_next = st.x + hp.eta * (st.x_tilde - st.x)
        for pos, k in enumerate(st.last_indices):
            st.z_sum += st._grads_cur[pos] - st.z_table[k]
            st.z_table[k] = st._grads_cur[pos]
        st.x_prev = st.x
        st.x = x_next

    _map_nodes(pool, phase_move, m)
    _check_finite(states, t)


# ---------------------------------------------------------------------------
# Baseline


def dpsgd_init(
    objectives: list[Objective],
    W: MixingMatrix,
    hp: HyperParams,
    seed: int,
    *,
    adaptive: str = "identity",
    x0: np.ndarray | None = None,
) -> list[NodeState]:
    """Decentralized SGD start: common iterate, per-node streams, no trackers."""
    d = _validate_problem(objectives, W)
    n = objectives[0].n
    if not 1 <= hp.batch <= n:
        raise ValueError(f"batch must satisfy 1 <= b <= n, got b={hp.batch}, n={n}")
    x_init = default_x0(d) if x0 is None else np.asarray(x0, dtype=float).copy()
    return [
        NodeState(
            node_id=i,
            x=x_init.copy(),
            rng=_philox(seed, _STREAM_NODE_OPT, i),
            adaptive=make_preconditioner(adaptive, d, hp.rho, hp.varrho),
        )
        for i in range(len(objectives))
    ]


def dpsgd_step(
    states: list[NodeState],
    W: MixingMatrix,
    hp: HyperParams,
    objectives: list[Objective],
    t: int,
    pool: ThreadPoolExecutor | None = None,
) -> None:
    """Gossip, then step along the local minibatch gradient at the pre-mix
    iterate: ``x <- mix(x)_i - gamma * grad_i``.  With one node this is plain
    SGD; with gamma = 0 it is pure gossip averaging."""
    m = len(states)
    mixed_x = W.weights @ _stack(states, "x")

    def phase(i: int) -> None:
        st = states[i]
        obj = objectives[i]
        idx = draw_minibatch(st.rng, obj.n, hp.batch)
        st.samples_drawn += hp.batch
        grad = obj.minibatch_grad(st.x, idx)
        st.grad_evals += hp.batch
        st.u = grad  # diagnostic only: the last local gradient signal
        st.x_prev = st.x
        st.x = mixed_x[i] - hp.gamma * grad

    _map_nodes(pool, phase, m)
    _check_finite(states, t)


# ---------------------------------------------------------------------------
# Runner

_INITS = {"adamdos": adamdos_init, "adamdof": adamdof_init, "dpsgd": dpsgd_init}
_STEPS = {"adamdos": adamdos_step, "adamdof": adamdof_step, "dpsgd": dpsgd_step}
_ANCHORS = {"adamdos": "x", "adamdof": "x_prev", "dpsgd": "x_prev"}


def run(
    algorithm: str,
    objectives: list[Objective],
    W: MixingMatrix,
    hp: HyperParams,
    seed: int,
    *,
    record_every: int | str = "epoch",
    callbacks: tuple = (),
    workers: int = 1,
    adaptive: str | None = None,
    x0: np.ndarray | None = None,
    collect_snapshots: bool = False,
) -> RunResult:
    """Drive ``hp.T`` synchronous steps and record metric rows at a cadence.

    ``record_every`` is a positive step count, or ``"epoch"`` to record
    whenever cumulative per-node draws cross a multiple of n (the stochastic
    loop consumes 1 draw per step, the others ``hp.batch``).  Callbacks fire
    at recording time as ``callback(step, states, row)``.  On divergence the
    partial trace is attached to the raised :class:`DivergenceError`.

    With ``workers > 1`` the per-node phases run on a thread pool; gossip
    mixes act as barriers and reductions are index-ordered, so results are
    byte-identical to the serial run.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    if isinstance(record_every, int) and record_every < 1:
        raise ValueError(f"record_every must be positive, got {record_every}")
    if isinstance(record_every, str) and record_every != "epoch":
        raise ValueError(f"record_every must be an int or 'epoch', got {record_every!r}")
    if workers < 1:
        raise ValueError(f"workers must be at least 1, got {workers}")
    if adaptive is None:
        adaptive = "adam"
    n = objectives[0].n
    states = _INITS[algorithm](objectives, W, hp, seed, adaptive=adaptive, x0=x0)
    per_step = hp.batch
    anchor = _ANCHORS[algorithm]
    step_fn = _STEPS[algorithm]
    trace: list[MetricRow] = []
    snapshots: list[Snapshot] | None = None
    if collect_snapshots:
        snapshots = [take_snapshot(states, with_z=(algorithm == "adamdof"))]
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for step_no in range(1, hp.T + 1):
            # the finite-sum loop indexes its steps from 1, the others from 0
            t = step_no if algorithm == "adamdof" else step_no - 1
            try:
                step_fn(states, W, hp, objectives, t, pool)
            except DivergenceError as exc:
                exc.trace = trace
                raise
            if algorithm != "dpsgd":
                # tracking preserves the estimator mean exactly (up to fp)
                ubar = _stack(states, "u").mean(axis=0)
                wbar = _stack(states, "w").mean(axis=0)
                assert np.max(np.abs(ubar - wbar)) <= 1e-9 * (
                    1.0 + np.max(np.abs(ubar))
                ), "tracking lost the estimator mean"
            if collect_snapshots:
                snapshots.append(take_snapshot(states, with_z=(algorithm == "adamdof")))
            drawn = step_no * per_step
            if record_every == "epoch":
                due = (drawn // n) > ((drawn - per_step) // n)
            else:
                due = step_no % record_every == 0
            if due:
                row = compute_metrics(
                    states,
                    objectives,
                    step=step_no,
                    epoch=drawn / n,
                    samples=drawn,
                    estimator_anchor=anchor,
                )
                trace.append(row)
                for cb in callbacks:
                    cb(step_no, states, row)
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
    return RunResult(
        trace=trace,
        states=states,
        samples_per_node=[st.samples_drawn for st in states],
        init_samples_per_node=[st.init_samples for st in states],
        grad_evals_per_node=[st.grad_evals for st in states],
        snapshots=snapshots,
    )


def choose_uniform_iterate(snapshots: list[Snapshot], seed: int) -> tuple[int, int, np.ndarray]:
    """Pick (t, i) uniformly over recorded post-step states and return x_t^i.

    This is the convergence theory's output rule (a uniformly random iterate);
    reporting paths use full trajectory metrics instead, so this helper is
    opt-in.  ``snapshots[0]`` is the initial state and is excluded.
    """
    if len(snapshots) < 2:
        raise ValueError("need at least one post-step snapshot")
    rng = _philox(seed, _STREAM_OUTPUT_CHOICE)
    t = int(rng.integers(1, len(snapshots)))
    i = int(rng.integers(snapshots[t].x.shape[0]))
    return t, i, snapshots[t].x[i].copy()
