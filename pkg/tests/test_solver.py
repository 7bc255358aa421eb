import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dualkm.kernels import KernelSpec, kernel_block, rff_map, rff_sample
from dualkm.losses import LOSS_NAMES, make_loss
from dualkm.model import DualProblem
from dualkm.solver import (
    BlockObjective,
    DivergenceError,
    DualState,
    TrustRegionConfig,
    boundary_intersection,
    dbcd_train,
    initial_state,
    partition_blocks,
    select_block,
    tcg_steihaug,
    trust_region_solve,
)

INF2 = np.full(2, np.inf)


# -- partition and selection -----------------------------------------------------


def test_partition_examples():
    p = partition_blocks(4, 2, seed=0)
    assert len(p) == 2 and sorted(np.concatenate(p.blocks).tolist()) == [0, 1, 2, 3]
    assert [len(b) for b in partition_blocks(5, 2).blocks] == [2, 2, 1]
    a, b = partition_blocks(50, 7, seed=3), partition_blocks(50, 7, seed=3)
    assert all(np.array_equal(x, y) for x, y in zip(a.blocks, b.blocks))
    with pytest.raises(ValueError):
        partition_blocks(5, 0)


@given(n=st.integers(1, 300), size=st.integers(1, 300), seed=st.integers(0, 2**16))
def test_partition_covers_disjointly(n, size, seed):
    p = partition_blocks(n, size, seed)
    flat = np.concatenate(p.blocks)
    assert np.array_equal(np.sort(flat), np.arange(n))
    sizes = [len(b) for b in p.blocks]
    assert all(s <= size for s in sizes)
    assert sum(s < min(size, n) for s in sizes) <= 1


def _state(m, seed=0):
    p = partition_blocks(m, 1, seed)
    return DualState(np.zeros(m), p, np.random.default_rng([seed, 1]))


def test_select_block_uniform_and_deterministic():
    assert {select_block(_state(1)) for _ in range(10)} == {0}
    s = _state(4)
    draws = np.array([select_block(s) for _ in range(100_000)])
    freq = np.bincount(draws, minlength=4) / draws.size
    assert np.all(np.abs(freq - 0.25) < 0.01)
    s1, s2 = _state(4, 9), _state(4, 9)
    assert [select_block(s1) for _ in range(20)] == [select_block(s2) for _ in range(20)]


# -- boundary intersection and CG --------------------------------------------------


def test_boundary_intersection_examples():
    assert boundary_intersection(np.zeros(2), np.array([1.0, 0.0]), 0.5) == 0.5
    assert boundary_intersection(np.array([0.3, 0.0]), np.array([1.0, 0.0]), 0.5) == pytest.approx(0.2, abs=1e-15)
    with pytest.raises(ValueError):
        boundary_intersection(np.zeros(2), np.zeros(2), 1.0)


@given(
    s=st.lists(st.floats(-1, 1), min_size=3, max_size=3),
    d=st.lists(st.floats(-3, 3), min_size=3, max_size=3),
)
def test_boundary_intersection_residual(s, d):
    s, d = np.array(s) * 0.5, np.array(d)
    if np.linalg.norm(d) < 1e-3:
        d = d + 1.0
    w = boundary_intersection(s, d, 1.0)
    assert w > 0
    assert np.linalg.norm(s + w * d) == pytest.approx(1.0, abs=1e-10)


def test_tcg_examples():
    Q = 2 * np.eye(2)
    g = np.array([-2.0, 0.0])
    np.testing.assert_allclose(tcg_steihaug(Q, g, np.zeros(2), INF2, -INF2, 10.0), [1.0, 0.0])
    np.testing.assert_allclose(tcg_steihaug(Q, g, np.zeros(2), INF2, -INF2, 0.5), [0.5, 0.0])
    upper = np.array([0.3, np.inf])
    np.testing.assert_allclose(tcg_steihaug(Q, g, np.zeros(2), upper, -INF2, 10.0), [0.3, 0.0])


def test_tcg_literal_break_returns_previous_iterate():
    Q = 2 * np.eye(2)
    g = np.array([-2.0, 0.0])
    upper = np.array([0.3, np.inf])
    s = tcg_steihaug(Q, g, np.zeros(2), upper, -INF2, 10.0, literal_box_break=True)
    # the first CG iterate leaves the box, so the literal rule stalls at zero
    np.testing.assert_array_equal(s, [0.0, 0.0])


def test_tcg_fixes_coordinates_pushing_out_of_box():
    Q = np.eye(2)
    g = np.array([-1.0, -1.0])
    alpha = np.array([0.0, 1.0])
    s = tcg_steihaug(Q, g, alpha, np.array([5.0, 1.0]), np.array([-5.0, -5.0]), 10.0)
    assert s[1] == 0 and s[0] == pytest.approx(1.0)


def test_tcg_negative_curvature_walks_to_radius():
    Q = np.diag([-1.0, 1.0])
    g = np.array([-1.0, 0.0])
    s = tcg_steihaug(Q, g, np.zeros(2), INF2, -INF2, 0.7)
    assert np.linalg.norm(s) == pytest.approx(0.7)


def test_tcg_rejects_non_finite():
    with pytest.raises(ValueError):
        tcg_steihaug(np.eye(2), np.array([np.nan, 0.0]), np.zeros(2), INF2, -INF2, 1.0)


def _mu(Q, g, s):
    return g @ s + 0.5 * s @ Q @ s


@given(seed=st.integers(0, 10_000))
def test_tcg_contract_property(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(1, 9))
    A = r.standard_normal((n, n))
    Q = A.T @ A
    g = r.standard_normal(n) * 3
    lower = -r.uniform(0, 2, n)
    upper = r.uniform(0, 2, n)
    alpha = lower + (upper - lower) * r.uniform(0, 1, n)
    delta = float(r.uniform(0.01, 3))
    s = tcg_steihaug(Q, g, alpha, upper, lower, delta)
    assert np.linalg.norm(s) <= delta * (1 + 1e-12)
    assert np.all(alpha + s <= upper) and np.all(alpha + s >= lower)
    assert _mu(Q, g, s) <= 1e-12


# -- trust region ----------------------------------------------------------------


def test_trust_region_singleton_square():
    block = BlockObjective(make_loss("square"), np.array([1.0]), 1.0)
    res = trust_region_solve(np.zeros(1), np.ones((1, 1)), np.zeros(1), block)
    assert res.alpha[0] == pytest.approx(0.5, abs=1e-12)
    assert res.gbar[0] == pytest.approx(0.5, abs=1e-12)
    assert res.change == pytest.approx(-0.25)


def test_trust_region_quadratic_block_is_exact(rng):
    X = rng.standard_normal((12, 3))
    K = kernel_block(KernelSpec("gaussian", 1.0), X, X)
    y = rng.standard_normal(12)
    block = BlockObjective(make_loss("square"), y, 0.5)
    cfg = TrustRegionConfig(delta_max=1e6, tol=1e-12, max_cg_iter=50)
    res = trust_region_solve(np.zeros(12), K, np.zeros(12), block, cfg)
    np.testing.assert_allclose(res.rhos, 1.0, atol=1e-8)
    np.testing.assert_allclose(res.alpha, np.linalg.solve(K + 0.5 * np.eye(12), y), rtol=1e-8)


class _FlatBlock:
    """Objective whose value cancels the quadratic part, so J never changes."""

    loss = make_loss("square")

    def __init__(self, K, gbar):
        self.K, self.gbar0 = K, gbar
        self.lower, self.upper = np.full(2, -np.inf), np.full(2, np.inf)

    def value(self, a):
        return -float(self.gbar0 @ a + 0.5 * a @ self.K @ a)

    def model(self, a, gbar):
        return np.array([-1.0, 0.0]), np.zeros(2), self.lower, self.upper

    def delta_max(self, config):
        return config.delta_max


def test_trust_region_rejects_step_without_actual_decrease():
    K = np.eye(2)
    block = _FlatBlock(K, np.zeros(2))
    cfg = TrustRegionConfig(delta_max=1.0, eta=0.1, max_tr_iter=1)
    res = trust_region_solve(np.zeros(2), K, np.zeros(2), block, cfg)
    assert res.rhos == [pytest.approx(0.0, abs=1e-15)]
    assert res.radii == [pytest.approx(0.25 / 4)]
    assert res.accepted == 0
    np.testing.assert_array_equal(res.alpha, 0)


def test_trust_region_never_increases_block_objective(rng):
    for name in LOSS_NAMES:
        y = np.where(rng.random(8) > 0.5, 1.0, -1.0) if make_loss(name).classification else rng.standard_normal(8)
        X = rng.standard_normal((8, 2))
        K = kernel_block(KernelSpec("gaussian", 1.0), X, X)
        block = BlockObjective(make_loss(name), y, 1.0)
        a0 = make_loss(name).init_alpha(y, 1.0)
        res = trust_region_solve(a0, K, K @ a0, block)
        J0 = 0.5 * a0 @ K @ a0 + block.value(a0)
        J1 = 0.5 * res.alpha @ K @ res.alpha + block.value(res.alpha)
        assert J1 <= J0 + 1e-12
        assert J1 - J0 == pytest.approx(res.change, abs=1e-10)


# -- outer loop ------------------------------------------------------------------


def _regression(n=50, d=3, seed=0):
    r = np.random.default_rng(seed)
    X = r.standard_normal((n, d))
    return X, np.sin(X[:, 0]) + 0.1 * r.standard_normal(n)


def test_dbcd_zero_iterations_returns_initial_state():
    X, y = _regression()
    st0 = dbcd_train(X, y, "square", 1.0, KernelSpec(), n_iter=0)
    np.testing.assert_array_equal(st0.alpha, 0)
    assert st0.iteration == 0 and st0.objective == 0.0


def test_dbcd_single_block_krr_one_iteration():
    X, y = _regression()
    spec = KernelSpec("gaussian", 1.0)
    cfg = TrustRegionConfig(delta_max=1e8, tol=1e-14, max_cg_iter=50)
    st1 = dbcd_train(X, y, "square", 1.0, spec, config=cfg, n_iter=1, block_size=50)
    K = kernel_block(spec, X, X)
    np.testing.assert_allclose(st1.alpha, np.linalg.solve(K + np.eye(50), y), atol=1e-6)


def test_dbcd_feasible_and_monotone_every_iteration():
    r = np.random.default_rng(1)
    X = r.standard_normal((40, 2))
    y = np.where(X[:, 0] > 0, 1.0, -1.0)
    spec = KernelSpec("gaussian", 1.0)
    for name in ("hinge", "logistic", "svr"):
        loss = make_loss(name)
        box = loss.dual_box(y, 2.0)
        prob = DualProblem(X, y, loss, 2.0, spec)
        seen = []

        def cb(state):
            assert np.all(state.alpha >= box.lower) and np.all(state.alpha <= box.upper)
            seen.append(prob.dual_objective(state.alpha))

        dbcd_train(X, y, loss, 2.0, spec, n_iter=60, block_size=10, callback=cb)
        diffs = np.diff(seen)
        assert np.all(diffs <= 1e-10 * (1 + np.abs(seen[1:])))


def test_dbcd_tracked_objective_matches_recomputed():
    X, y = _regression(80)
    spec = KernelSpec("gaussian", 1.0)
    st1 = dbcd_train(X, y, "huber", 0.5, spec, n_iter=30, block_size=16)
    direct = DualProblem(X, y, "huber", 0.5, spec).dual_objective(st1.alpha)
    assert st1.objective == pytest.approx(direct, rel=1e-10, abs=1e-12)


def test_dbcd_inexact_theta_consistency():
    X, y = _regression(120, 4)
    fmap = rff_sample(KernelSpec("gaussian", 1.5), 256, 4, seed=2)
    st1 = dbcd_train(X, y, "square", 1.0, fmap, n_iter=40, block_size=30)
    theta = rff_map(fmap, X) @ st1.alpha
    assert np.linalg.norm(st1.theta - theta) <= 1e-10 * (1 + np.linalg.norm(theta))


def test_dbcd_deterministic():
    X, y = _regression(60)
    a = dbcd_train(X, y, "lp", 1.0, KernelSpec(), n_iter=20, block_size=13, seed=5)
    b = dbcd_train(X, y, "lp", 1.0, KernelSpec(), n_iter=20, block_size=13, seed=5)
    assert a.alpha.tobytes() == b.alpha.tobytes()


def test_dbcd_input_validation():
    X, y = _regression(10)
    with pytest.raises(ValueError):
        dbcd_train(X, y, "square", 0.0, KernelSpec())
    with pytest.raises(ValueError):
        dbcd_train(X, y, "hinge", 1.0, KernelSpec())
    with pytest.raises(TypeError):
        dbcd_train(X, y, "square", 1.0, "gaussian")
    with pytest.raises(ValueError):
        dbcd_train(X[:5], y, "square", 1.0, KernelSpec())


def test_dbcd_non_finite_inputs_abort():
    X, y = _regression(10)
    y[3] = np.nan
    with pytest.raises((DivergenceError, ValueError)):
        dbcd_train(X, y, "square", 1.0, KernelSpec(), n_iter=5, block_size=10)


def test_initial_state_logistic_interior():
    X, y = _regression(10)
    y = np.where(y > 0, 1.0, -1.0)
    st0 = initial_state(X, y, "logistic", 2.0**-7, KernelSpec(), partition_blocks(10, 5))
    assert np.all(y * st0.alpha == pytest.approx(min(1e-3 * 2**7, 0.5 * 2**7)))


def test_trust_region_config_validation():
    with pytest.raises(ValueError):
        TrustRegionConfig(eta=0.3)
    with pytest.raises(ValueError):
        TrustRegionConfig(delta_max=0)
    with pytest.raises(ValueError):
        TrustRegionConfig(max_cg_iter=0)
