"""Optimizer loops: parameter validation, counters, identities, determinism."""
import numpy as np
import pytest

from adamdo import (
    DivergenceError,
    HyperParams,
    build_complete,
    build_ring,
    choose_uniform_iterate,
    default_x0,
    make_mixing_matrix,
    random_quadratic,
    run,
    synthetic_logistic,
    take_snapshot,
)
from adamdo.optimizer import (
    adamdof_init,
    adamdof_step,
    adamdos_init,
    adamdos_step,
    dpsgd_init,
    dpsgd_step,
)


def _hp(**kw):
    base = dict(gamma=0.05, eta=0.9, beta=0.9, varrho=0.9, rho=1e-3, batch=1, T=20)
    base.update(kw)
    return HyperParams(**base)


# ---------------------------------------------------------------------------
# hyperparameters


def test_hyperparams_collects_every_violation():
    with pytest.raises(ValueError) as err:
        HyperParams(gamma=-1.0, eta=2.0, beta=0.0, varrho=1.0, rho=0.0, batch=0, T=-5)
    msg = str(err.value)
    for fragment in ("gamma", "eta", "beta", "varrho", "rho", "batch", "T"):
        assert fragment in msg
    assert msg.count(";") == 6  # one clause per violated field


def test_hyperparams_boundary_values():
    hp = HyperParams(gamma=1e-9, eta=1.0, beta=1.0, T=0)
    assert hp.eta == 1.0 and hp.beta == 1.0 and hp.T == 0
    with pytest.raises(ValueError):
        HyperParams(gamma=0.0)


def test_default_x0():
    np.testing.assert_allclose(default_x0(4), np.full(4, 0.01), atol=0)


def test_batch_validated_against_n(synth_small, ring5):
    with pytest.raises(ValueError, match="batch must satisfy"):
        adamdos_init(synth_small, ring5, _hp(batch=31), seed=0)
    with pytest.raises(ValueError, match="batch must satisfy"):
        adamdof_init(synth_small, ring5, _hp(batch=31), seed=0)
    with pytest.raises(ValueError, match="batch must satisfy"):
        dpsgd_init(synth_small, ring5, _hp(batch=31), seed=0)


def test_problem_shape_validation(synth_small, ring5):
    with pytest.raises(ValueError, match="3 objectives for 5"):
        adamdos_init(synth_small[:3], ring5, _hp(), seed=0)
    mixed_dims = synth_small[:4] + synthetic_logistic(1, 30, 5, seed=0)
    with pytest.raises(ValueError, match="dimension"):
        adamdos_init(mixed_dims, ring5, _hp(), seed=0)


# ---------------------------------------------------------------------------
# counters


def test_counters_stochastic_loop(synth_small, ring5):
    res = run("adamdos", synth_small, ring5, _hp(T=100), seed=1, record_every=50)
    assert res.samples_per_node == [100] * 5
    assert res.init_samples_per_node == [1] * 5
    assert res.grad_evals_per_node == [1 + 200] * 5


def test_counters_finite_sum_loop(synth_small, ring5):
    res = run("adamdof", synth_small, ring5, _hp(batch=3, T=50), seed=1, record_every=25)
    assert res.samples_per_node == [150] * 5
    assert res.init_samples_per_node == [0] * 5
    assert res.grad_evals_per_node == [300] * 5


def test_counters_baseline(synth_small, ring5):
    res = run("dpsgd", synth_small, ring5, _hp(batch=2, T=30), seed=1, record_every=30)
    assert res.samples_per_node == [60] * 5
    assert res.init_samples_per_node == [0] * 5
    assert res.grad_evals_per_node == [60] * 5


# ---------------------------------------------------------------------------
# estimator structure


def test_beta_one_estimator_is_the_fresh_gradient(synth_small, ring5):
    hp = _hp(beta=1.0, batch=2, T=0)
    states = adamdos_init(synth_small, ring5, hp, seed=3)
    for t in range(10):
        adamdos_step(states, ring5, hp, synth_small, t)
        for st in states:
            # (1 - beta) = 0 kills the recursive term exactly, bit for bit
            assert np.array_equal(st.u, st.fresh_grad)


def test_tracking_mean_identity_manual_loop(synth_small, ring5):
    hp = _hp(batch=2)
    states = adamdof_init(synth_small, ring5, hp, seed=4)
    for t in range(1, 31):
        adamdof_step(states, ring5, hp, synth_small, t)
        ubar = np.mean([st.u for st in states], axis=0)
        wbar = np.mean([st.w for st in states], axis=0)
        assert np.max(np.abs(ubar - wbar)) <= 1e-9 * (1 + np.max(np.abs(ubar)))


def test_finite_sum_table_shadows_component_gradients(ring5):
    objs = synthetic_logistic(5, 12, 4, seed=6)
    hp = _hp(batch=4)
    states = adamdof_init(objs, ring5, hp, seed=6)
    for t in range(1, 8):
        adamdof_step(states, ring5, hp, objs, t)
    for st, obj in zip(states, objs):
        # the running sum matches the table it summarizes
        np.testing.assert_allclose(
            st.z_sum, st.z_table.sum(axis=0), rtol=0, atol=1e-12
        )
        # rows touched this step hold gradients at the iterate they were
        # evaluated on (the post-step previous iterate)
        fresh = obj.component_grads(st.x_prev, st.last_indices)
        assert np.array_equal(st.z_table[st.last_indices], fresh)


def test_baseline_singleton_is_plain_sgd():
    (obj,) = synthetic_logistic(1, 20, 3, seed=8)
    W = make_mixing_matrix(np.array([[1.0]]), allow_singleton=True)
    hp = _hp(gamma=0.1, batch=2)
    states = dpsgd_init([obj], W, hp, seed=8)
    for t in range(12):
        dpsgd_step(states, W, hp, [obj], t)
    # replay by hand on the documented per-node stream (seed, 10, node)
    rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=8, spawn_key=(10, 0)))
    )
    x = default_x0(3)
    for _ in range(12):
        idx = np.sort(rng.choice(20, size=2, replace=False))
        x = x - 0.1 * obj.minibatch_grad(x, idx)
    assert np.array_equal(states[0].x, x)


def test_baseline_zero_gamma_is_pure_gossip(quad_small, rng):
    W = build_ring(5)
    hp = _hp(gamma=1.0, T=0)
    hp.gamma = 0.0  # the step function itself places no lower bound on gamma
    states = dpsgd_init(quad_small, W, hp, seed=5)
    for st in states:
        st.x = rng.standard_normal(st.x.shape)
    mean0 = np.mean([st.x for st in states], axis=0)
    dev = np.linalg.norm(np.stack([st.x for st in states]) - mean0)
    for t in range(15):
        dpsgd_step(states, W, hp, quad_small, t)
        stack = np.stack([st.x for st in states])
        np.testing.assert_allclose(stack.mean(axis=0), mean0, atol=1e-12)
        new_dev = np.linalg.norm(stack - mean0)
        assert new_dev <= W.nu * dev + 1e-12
        dev = new_dev
    assert dev <= 1e-3  # iterates actually coalesced


# ---------------------------------------------------------------------------
# runner behavior


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_divergence_carries_partial_trace(quad_small, ring5):
    # adam's normalized direction absorbs any gamma, so blow the run up
    # through the non-adaptive kind instead
    hp = _hp(gamma=1e100, T=50)
    with pytest.raises(DivergenceError) as err:
        run("adamdos", quad_small, ring5, hp, seed=0, record_every=1, adaptive="identity")
    exc = err.value
    assert exc.step >= 0 and 0 <= exc.node < 5
    assert len(exc.trace) >= 1  # rows recorded before the blow-up survive
    assert "non-finite" in str(exc)


def test_epoch_cadence_with_ragged_batches():
    objs = synthetic_logistic(3, 10, 4, seed=2)
    W = build_ring(3)
    res = run("adamdof", objs, W, _hp(batch=3, T=10), seed=2, record_every="epoch")
    # draws per node go 3, 6, 9, 12, ... so epoch boundaries land unevenly
    assert [row.step for row in res.trace] == [4, 7, 10]
    np.testing.assert_allclose([row.epoch for row in res.trace], [1.2, 2.1, 3.0])


def test_epoch_cadence_single_sample(synth_small, ring5):
    res = run("adamdos", synth_small, ring5, _hp(T=90), seed=3, record_every="epoch")
    assert [row.step for row in res.trace] == [30, 60, 90]
    assert [row.samples for row in res.trace] == [30, 60, 90]


def test_step_cadence(synth_small, ring5):
    res = run("adamdos", synth_small, ring5, _hp(T=10), seed=3, record_every=4)
    assert [row.step for row in res.trace] == [4, 8]


@pytest.mark.parametrize("algorithm", ["adamdos", "adamdof"])
def test_worker_count_does_not_change_results(algorithm, synth_small, ring5):
    hp = _hp(batch=5, T=15)
    serial = run(algorithm, synth_small, ring5, hp, seed=9, record_every=5)
    pooled = run(algorithm, synth_small, ring5, hp, seed=9, record_every=5, workers=4)
    for st_a, st_b in zip(serial.states, pooled.states):
        assert np.array_equal(st_a.x, st_b.x)
        assert np.array_equal(st_a.u, st_b.u)
        assert np.array_equal(st_a.w, st_b.w)
    for ra, rb in zip(serial.trace, pooled.trace):
        assert ra == rb


def test_snapshots_are_deep_copies(quad_small, ring5):
    hp = _hp(T=5)
    res = run("adamdos", quad_small, ring5, hp, seed=7, collect_snapshots=True)
    assert res.snapshots is not None and len(res.snapshots) == 6
    before = res.snapshots[2].x.copy()
    res.states[0].x[:] = 123.0  # live state mutation must not reach snapshots
    np.testing.assert_allclose(res.snapshots[2].x, before, atol=0)
    # initial snapshot reflects the common start
    np.testing.assert_allclose(res.snapshots[0].x, 0.01, atol=0)


def test_take_snapshot_with_table(quad_small, ring5):
    states = adamdof_init(quad_small, ring5, _hp(), seed=0)
    snap = take_snapshot(states, with_z=True)
    assert snap.z is not None and snap.z.shape == (5, 1, 6)
    snap_no = take_snapshot(states, with_z=False)
    assert snap_no.z is None


def test_choose_uniform_iterate(quad_small, ring5):
    res = run("adamdos", quad_small, ring5, _hp(T=8), seed=1, collect_snapshots=True)
    t, i, x = choose_uniform_iterate(res.snapshots, seed=42)
    assert 1 <= t <= 8 and 0 <= i < 5
    assert np.array_equal(x, res.snapshots[t].x[i])
    again = choose_uniform_iterate(res.snapshots, seed=42)
    assert (t, i) == (again[0], again[1])
    with pytest.raises(ValueError, match="post-step"):
        choose_uniform_iterate(res.snapshots[:1], seed=0)


def test_zero_step_run(synth_small, ring5):
    res = run("adamdos", synth_small, ring5, _hp(T=0), seed=0)
    assert res.trace == []
    assert res.samples_per_node == [0] * 5
    assert res.init_samples_per_node == [1] * 5


def test_x0_override_is_copied(quad_small, ring5):
    x0 = np.arange(6.0)
    res = run("adamdos", quad_small, ring5, _hp(T=0), seed=0, x0=x0)
    x0[:] = -1.0
    for st in res.states:
        np.testing.assert_allclose(st.x, np.arange(6.0), atol=0)


def test_runner_argument_validation(synth_small, ring5):
    with pytest.raises(ValueError, match="unknown algorithm"):
        run("sgd", synth_small, ring5, _hp(), seed=0)
    with pytest.raises(ValueError, match="record_every"):
        run("adamdos", synth_small, ring5, _hp(), seed=0, record_every=0)
    with pytest.raises(ValueError, match="record_every"):
        run("adamdos", synth_small, ring5, _hp(), seed=0, record_every="weekly")
    with pytest.raises(ValueError, match="workers"):
        run("adamdos", synth_small, ring5, _hp(), seed=0, workers=0)
    with pytest.raises(ValueError, match="unknown adaptive kind"):
        run("adamdos", synth_small, ring5, _hp(), seed=0, adaptive="nope")


def test_callbacks_fire_at_recording_time(synth_small, ring5):
    seen = []
    run(
        "adamdos",
        synth_small,
        ring5,
        _hp(T=9),
        seed=0,
        record_every=3,
        callbacks=(lambda step, states, row: seen.append((step, row.step)),),
    )
    assert seen == [(3, 3), (6, 6), (9, 9)]


@pytest.mark.parametrize("adaptive", ["adam", "bb", "identity"])
def test_adaptive_kinds_run_everywhere(adaptive, quad_small):
    W = build_complete(5)
    for algorithm in ("adamdos", "adamdof", "dpsgd"):
        res = run(
            algorithm, quad_small, W, _hp(T=10), seed=2, adaptive=adaptive, record_every=5
        )
        assert all(np.isfinite(st.x).all() for st in res.states)
