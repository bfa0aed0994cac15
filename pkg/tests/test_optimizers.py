import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blockopt import oracle
from blockopt.blocks import BlockedVector, l2_norm, partition
from blockopt.optimizers import (
    NonFiniteGradientError,
    OptimizerConfig,
    OptimizerState,
    Phi,
    StepReport,
    adamw_step,
    bias_correct,
    lamb_step,
    lans_step,
    make_stepper,
    nag_step,
    normalize_gradient_block,
    sgd_momentum_step,
    trust_scale,
)

LAYOUT = partition([6, 5, 5])


def run_steps(name, config, x0, grads, etas):
    params = BlockedVector(np.asarray(x0, dtype=float).copy(), LAYOUT)
    state = OptimizerState.zeros(LAYOUT)
    stepper = make_stepper(name, config)
    trajectory, reports = [], []
    for g, eta in zip(grads, etas):
        params, state, report = stepper(params, state, BlockedVector(np.asarray(g).copy(), LAYOUT), eta)
        trajectory.append(params.data.copy())
        reports.append(report)
    return trajectory, reports


# ---------------------------------------------------------------------------
# config and helper validation

def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(beta1=1.0)
    with pytest.raises(ValueError):
        OptimizerConfig(beta2=-0.1)
    with pytest.raises(ValueError):
        OptimizerConfig(epsilon=-1e-9)
    with pytest.raises(ValueError):
        OptimizerConfig(weight_decay=-0.1)
    with pytest.raises(ValueError):
        OptimizerConfig(weight_decay=(0.1, -0.2))
    with pytest.raises(ValueError):
        OptimizerConfig(zero_grad_policy="clip")


def test_per_block_decay_length_checked():
    config = OptimizerConfig(weight_decay=(0.1, 0.2))
    with pytest.raises(ValueError):
        config.decay_per_block(3)
    assert OptimizerConfig(weight_decay=0.1).decay_per_block(3) == (0.1, 0.1, 0.1)


def test_phi_clamp():
    phi = Phi.clamp(0.5, 2.0)
    assert phi(0.1) == 0.5
    assert phi(1.3) == 1.3
    assert phi(9.0) == 2.0
    with pytest.raises(ValueError):
        Phi.clamp(2.0, 1.0)
    with pytest.raises(ValueError):
        Phi("banana")


def test_bias_correct_first_step_and_errors():
    m = np.array([0.1, -0.2])
    v = np.array([0.01, 0.04])
    m_hat, v_hat = bias_correct(m, v, 1, 0.9, 0.999)
    np.testing.assert_allclose(m_hat, m / 0.1, rtol=1e-15)
    np.testing.assert_allclose(v_hat, v / 0.001, rtol=1e-15)
    with pytest.raises(ValueError):
        bias_correct(m, v, 0, 0.9, 0.999)


def test_trust_scale_degenerate_cases():
    phi = Phi.identity()
    assert trust_scale(np.zeros(3), np.ones(3), phi) == 1.0
    assert trust_scale(np.ones(3), np.zeros(3), phi) == 1.0
    assert trust_scale(np.array([3.0, 4.0]), np.array([0.0, 2.0]), phi) == 2.5


@given(st.lists(st.floats(min_value=-1e6, max_value=1e6), min_size=1, max_size=32))
def test_normalize_gives_unit_norm_on_nonzero_blocks(values):
    g = np.asarray(values)
    if l2_norm(g) == 0.0:
        out = normalize_gradient_block(g)
        assert np.all(out == 0.0)
    else:
        out = normalize_gradient_block(g)
        assert abs(l2_norm(out) - 1.0) <= 1e-12


def test_normalize_policies_and_errors():
    zero = np.zeros(4)
    assert np.all(normalize_gradient_block(zero, "zero_passthrough") == 0.0)
    floored = normalize_gradient_block(zero, "epsilon_floor", floor=1e-16)
    assert np.all(floored == 0.0)
    g = np.array([3.0, 4.0])
    out = normalize_gradient_block(g, "epsilon_floor", floor=1.0)
    np.testing.assert_allclose(out, g / 6.0, rtol=1e-15)
    with pytest.raises(NonFiniteGradientError):
        normalize_gradient_block(np.array([1.0, np.nan]))
    with pytest.raises(ValueError):
        normalize_gradient_block(g, "bogus")


# ---------------------------------------------------------------------------
# hand-computed single step (every operation exact in float64)

def test_lamb_single_step_matches_hand_computation():
    layout = partition([1])
    params = BlockedVector(np.array([2.0]), layout)
    grad = BlockedVector(np.array([5.0]), layout)
    config = OptimizerConfig(beta1=0.5, beta2=0.75, epsilon=0.0, weight_decay=0.0)
    state = OptimizerState.zeros(layout)
    # m = 2.5, v = 6.25; debias: m/0.5 = 5, v/0.25 = 25; r = 5/sqrt(25) = 1
    # trust = |x|/|r| = 2; x' = 2 - 0.25 * 2 * 1 = 1.5
    new_params, new_state, report = lamb_step(params, state, grad, 0.25, config)
    assert new_params.data[0] == 1.5
    assert new_state.m.data[0] == 2.5
    assert new_state.v.data[0] == 6.25
    assert new_state.t == 1
    assert report.trust_ratios == (2.0,)
    assert report.update_norms == (2.0,)


def test_oracle_agrees_with_hand_computation():
    ref = oracle.lamb_trajectory(
        np.array([2.0]), [1], [np.array([5.0])], [0.25],
        beta1=0.5, beta2=0.75, epsilon=0.0, weight_decay=0.0,
    )
    assert float(ref[0][0]) == 1.5


# ---------------------------------------------------------------------------
# norm invariants

def random_state(rng, warm_steps=3):
    """A params/state pair produced by a few real LAMB steps, so m and v are generic."""
    config = OptimizerConfig(weight_decay=0.01)
    params = BlockedVector(rng.uniform(-2, 2, LAYOUT.total_dim), LAYOUT)
    state = OptimizerState.zeros(LAYOUT)
    for _ in range(warm_steps):
        g = BlockedVector(rng.standard_normal(LAYOUT.total_dim), LAYOUT)
        params, state, _ = lamb_step(params, state, g, 0.01, config)
    return params, state


def test_lamb_update_norm_equals_rate_times_phi():
    rng = np.random.default_rng(11)
    config = OptimizerConfig(weight_decay=0.0)
    for _ in range(50):
        params, state = random_state(rng)
        grad = BlockedVector(rng.standard_normal(LAYOUT.total_dim), LAYOUT)
        eta = float(rng.uniform(0.001, 0.5))
        new_params, _, report = lamb_step(params, state, grad, eta, config)
        for b, sl in enumerate(LAYOUT.iter_slices()):
            step_norm = l2_norm(new_params.data[sl] - params.data[sl])
            target = eta * config.phi(l2_norm(params.data[sl]))
            assert step_norm == pytest.approx(target, rel=1e-12)


def test_lans_update_norm_capped_by_phi():
    rng = np.random.default_rng(12)
    config = OptimizerConfig(weight_decay=0.01)
    for _ in range(50):
        params, state = random_state(rng)
        grad = BlockedVector(rng.standard_normal(LAYOUT.total_dim), LAYOUT)
        _, _, report = lans_step(params, state, grad, 0.1, config)
        for b, sl in enumerate(LAYOUT.iter_slices()):
            cap = config.phi(l2_norm(params.data[sl])) * (1.0 + 1e-12)
            assert report.update_norms[b] <= cap


def test_lans_update_is_convex_combination_of_unit_directions():
    """Rebuild both branches with independent numpy code and compare."""
    rng = np.random.default_rng(13)
    beta1 = 0.9
    config = OptimizerConfig(beta1=beta1, weight_decay=0.05)
    params, state = random_state(rng)
    grad = BlockedVector(rng.standard_normal(LAYOUT.total_dim), LAYOUT)
    eta = 0.2
    new_params, _, _ = lans_step(params, state, grad, eta, config)

    t = state.t + 1
    for b, sl in enumerate(LAYOUT.iter_slices()):
        x = params.data[sl]
        g = grad.data[sl]
        gt = g / np.linalg.norm(g)
        m = beta1 * state.m.data[sl] + (1 - beta1) * gt
        v = config.beta2 * state.v.data[sl] + (1 - config.beta2) * gt**2
        denom = np.sqrt(v / (1 - config.beta2**t)) + config.epsilon
        r = (m / (1 - beta1**t)) / denom
        c = gt / denom
        u_r = r + 0.05 * x
        u_c = c + 0.05 * x
        phi_x = np.linalg.norm(x)
        d = beta1 * phi_x * u_r / np.linalg.norm(u_r) + (1 - beta1) * phi_x * u_c / np.linalg.norm(u_c)
        expected = x - eta * d
        np.testing.assert_allclose(new_params.data[sl], expected, rtol=1e-12, atol=1e-14)


# ---------------------------------------------------------------------------
# LANS gradient-scale invariance

def lans_run_bytes(scale, steps=20, wd=0.01):
    rng = np.random.default_rng(21)
    x0 = rng.uniform(-1, 1, LAYOUT.total_dim)
    grads = [rng.standard_normal(LAYOUT.total_dim) for _ in range(steps)]
    etas = [0.01 + 0.001 * t for t in range(steps)]
    traj, _ = run_steps("lans", OptimizerConfig(weight_decay=wd), x0,
                        [scale * g for g in grads], etas)
    return [p.tobytes() for p in traj]


def test_lans_bitwise_invariant_to_power_of_two_gradient_scale():
    base = lans_run_bytes(1.0)
    for exponent in (-9, -3, 1, 6, 9):
        assert lans_run_bytes(2.0**exponent) == base


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=1e-3, max_value=1e3))
def test_lans_invariant_to_arbitrary_positive_gradient_scale(scale):
    rng = np.random.default_rng(22)
    x0 = rng.uniform(-1, 1, LAYOUT.total_dim)
    grads = [rng.standard_normal(LAYOUT.total_dim) for _ in range(5)]
    etas = [0.05] * 5
    base, _ = run_steps("lans", OptimizerConfig(), x0, grads, etas)
    scaled, _ = run_steps("lans", OptimizerConfig(), x0, [scale * g for g in grads], etas)
    np.testing.assert_allclose(scaled[-1], base[-1], rtol=1e-12, atol=1e-15)


def test_lamb_is_not_gradient_scale_invariant():
    """Scale sensitivity is what separates the two rules; pin it down."""
    rng = np.random.default_rng(23)
    x0 = rng.uniform(-1, 1, LAYOUT.total_dim)
    grads = [rng.standard_normal(LAYOUT.total_dim) for _ in range(5)]
    etas = [0.05] * 5
    base, _ = run_steps("lamb", OptimizerConfig(), x0, grads, etas)
    scaled, _ = run_steps("lamb", OptimizerConfig(), x0, [100.0 * g for g in grads], etas)
    assert not np.allclose(scaled[-1], base[-1], rtol=1e-6)


# ---------------------------------------------------------------------------
# oracle equivalence on short runs, including non-default settings

CASES = [
    ("lamb", dict(weight_decay=0.01)),
    ("lamb", dict(weight_decay=(0.0, 0.1, 0.2))),
    ("lamb", dict(normalize_grads=True, weight_decay=0.01)),
    ("lamb", dict(phi=Phi.clamp(0.5, 1.5), weight_decay=0.01)),
    ("lans", dict(weight_decay=0.01)),
    ("lans", dict(phi=Phi.clamp(0.2, 2.0), weight_decay=(0.0, 0.05, 0.1))),
    ("lans", dict(zero_grad_policy="epsilon_floor", normalize_eps=1e-12)),
    ("adamw", dict(weight_decay=0.05)),
    ("adamw", dict(normalize_grads=True)),
    ("sgd_momentum", dict(beta1=0.8)),
    ("nag", dict(beta1=0.95)),
]


@pytest.mark.parametrize("name,overrides", CASES)
def test_short_run_matches_oracle(name, overrides):
    config = OptimizerConfig(**overrides)
    rng = np.random.default_rng(31)
    steps = 200
    x0 = rng.uniform(-1, 1, LAYOUT.total_dim)
    grads = [rng.standard_normal(LAYOUT.total_dim) for _ in range(steps)]
    etas = [0.01 * min(1.0, t / 20) for t in range(1, steps + 1)]
    produced, _ = run_steps(name, config, x0, grads, etas)

    phi_fn = (
        oracle.identity_scale
        if config.phi.kind == "identity"
        else oracle.make_clamp(config.phi.lo, config.phi.hi)
    )
    common = dict(
        beta1=config.beta1, beta2=config.beta2, epsilon=config.epsilon,
        weight_decay=config.weight_decay, zero_grad_policy=config.zero_grad_policy,
        normalize_eps=config.normalize_eps,
    )
    if name == "lamb":
        ref = oracle.lamb_trajectory(
            x0, LAYOUT.sizes, grads, etas,
            phi=phi_fn, normalize_grads=config.normalize_grads, **common,
        )
    elif name == "lans":
        ref = oracle.lans_trajectory(x0, LAYOUT.sizes, grads, etas, phi=phi_fn, **common)
    elif name == "adamw":
        ref = oracle.adamw_trajectory(
            x0, LAYOUT.sizes, grads, etas,
            normalize_grads=config.normalize_grads, **common,
        )
    elif name == "sgd_momentum":
        ref = oracle.sgd_momentum_trajectory(x0, grads, etas, mu=config.beta1)
    else:
        ref = oracle.nag_trajectory(x0, grads, etas, mu=config.beta1)
    assert oracle.max_relative_deviation(produced, ref) <= 1e-12


# ---------------------------------------------------------------------------
# mechanics shared by all steppers

@pytest.mark.parametrize("name", ["lamb", "lans", "adamw", "sgd_momentum", "nag"])
def test_steppers_do_not_mutate_inputs(name):
    rng = np.random.default_rng(41)
    params = BlockedVector(rng.uniform(-1, 1, LAYOUT.total_dim), LAYOUT)
    state = OptimizerState.zeros(LAYOUT)
    grad = BlockedVector(rng.standard_normal(LAYOUT.total_dim), LAYOUT)
    snapshots = (params.data.copy(), state.m.data.copy(), state.v.data.copy(), grad.data.copy())
    stepper = make_stepper(name, OptimizerConfig(weight_decay=0.01))
    stepper(params, state, grad, 0.1)
    assert np.array_equal(params.data, snapshots[0])
    assert np.array_equal(state.m.data, snapshots[1])
    assert np.array_equal(state.v.data, snapshots[2])
    assert np.array_equal(grad.data, snapshots[3])
    assert state.t == 0


@pytest.mark.parametrize("name", ["lamb", "lans", "adamw", "sgd_momentum", "nag"])
def test_steppers_reject_non_finite_gradients(name):
    params = BlockedVector(np.ones(LAYOUT.total_dim), LAYOUT)
    state = OptimizerState.zeros(LAYOUT)
    bad = np.ones(LAYOUT.total_dim)
    bad[3] = np.inf
    stepper = make_stepper(name, OptimizerConfig())
    with pytest.raises(NonFiniteGradientError):
        stepper(params, state, BlockedVector(bad, LAYOUT), 0.1)


def test_steppers_reject_negative_rate_and_layout_mismatch():
    params = BlockedVector(np.ones(LAYOUT.total_dim), LAYOUT)
    state = OptimizerState.zeros(LAYOUT)
    grad = BlockedVector(np.ones(LAYOUT.total_dim), LAYOUT)
    with pytest.raises(ValueError):
        lamb_step(params, state, grad, -0.1, OptimizerConfig())
    other = partition([16])
    with pytest.raises(ValueError):
        lamb_step(params, state, BlockedVector(np.ones(16), other), 0.1, OptimizerConfig())


def test_zero_rate_leaves_parameters_unchanged_but_advances_state():
    rng = np.random.default_rng(42)
    params = BlockedVector(rng.uniform(-1, 1, LAYOUT.total_dim), LAYOUT)
    state = OptimizerState.zeros(LAYOUT)
    grad = BlockedVector(rng.standard_normal(LAYOUT.total_dim), LAYOUT)
    new_params, new_state, _ = lans_step(params, state, grad, 0.0, OptimizerConfig())
    assert np.array_equal(new_params.data, params.data)
    assert new_state.t == 1
    assert not np.array_equal(new_state.m.data, state.m.data)


def test_zero_gradient_with_passthrough_policy_is_stationary_for_lans():
    params = BlockedVector(np.ones(LAYOUT.total_dim), LAYOUT)
    state = OptimizerState.zeros(LAYOUT)
    zero = BlockedVector(np.zeros(LAYOUT.total_dim), LAYOUT)
    new_params, _, report = lans_step(params, state, zero, 0.1, OptimizerConfig())
    assert np.array_equal(new_params.data, params.data)
    assert report.update_norms == (0.0, 0.0, 0.0)


def test_spec_signatures_without_reports():
    rng = np.random.default_rng(43)
    params = BlockedVector(rng.uniform(-1, 1, LAYOUT.total_dim), LAYOUT)
    grad = BlockedVector(rng.standard_normal(LAYOUT.total_dim), LAYOUT)
    state = OptimizerState.zeros(LAYOUT)
    p1, s1 = adamw_step(params, state, grad, 0.01, OptimizerConfig())
    assert isinstance(p1, BlockedVector) and s1.t == 1
    p2, m2 = sgd_momentum_step(params, BlockedVector.zeros(LAYOUT), grad, 0.01, 0.9)
    np.testing.assert_allclose(m2.data, grad.data, rtol=0, atol=0)
    np.testing.assert_allclose(p2.data, params.data - 0.01 * grad.data, rtol=1e-15)
    p3, m3 = nag_step(params, BlockedVector.zeros(LAYOUT), grad, 0.01, 0.9)
    np.testing.assert_allclose(p3.data, params.data - 0.01 * 1.9 * grad.data, rtol=1e-15)


def test_make_stepper_rejects_unknown_name():
    with pytest.raises(ValueError):
        make_stepper("adam", OptimizerConfig())
