import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from thermocurriculum.errors import ConfigError
from thermocurriculum.friction import (
    autocovariance_fft,
    friction_exact,
    friction_sampled,
    log_trace,
    scalar_field,
)
from thermocurriculum.maxent_solver import policy_chain, solve_soft_avg, stationary_distribution
from thermocurriculum.mdp_core import TabularMdp

from conftest import single_state


def direct_autocov_sum(x, T):
    """O(N*T) double-loop lag sum with the 1/N convention."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, L = x.shape
    dx = x - x.mean(0)
    out = np.zeros((L, L))
    for t in range(T + 1):
        for k in range(n - t):
            out += np.outer(dx[k + t], dx[k])
    return out / n


def matrix_power_lag_sum(mdp, pi, rho, T):
    """sum_t Cov(phi(x_t), phi(x_0)) with explicit dense matrix powers."""
    M = policy_chain(mdp, pi)
    phi = mdp.features.reshape(len(rho), -1)
    dphi = phi - rho @ phi
    out = np.zeros((phi.shape[1],) * 2)
    Mt = np.eye(len(rho))
    for _ in range(T + 1):
        out += (rho[:, None] * dphi).T @ Mt @ dphi
        Mt = Mt @ M
    return 0.5 * (out + out.T)


def solved(mdp, lam, alpha=0.2):
    sol = solve_soft_avg(mdp, lam, alpha)
    return sol, stationary_distribution(policy_chain(mdp, sol.policy))


def test_constant_feature_has_no_friction(grid7):
    feats = np.concatenate([grid7.features, np.full((49, 4, 1), 3.0)], axis=-1)
    mdp = TabularMdp(grid7.transitions, feats)
    sol, rho = solved(mdp, [0.5, -0.2, 0.0])
    z = friction_exact(mdp, sol, rho, T=200).zeta
    assert np.all(z[2] == 0.0) and np.all(z[:, 2] == 0.0)


def test_iid_action_indicator():
    mdp = TabularMdp(np.ones((1, 2, 1)), np.eye(2).reshape(1, 2, 2))
    sol, rho = solved(mdp, [0.0, 0.0])
    z = friction_exact(mdp, sol, rho, T=10).zeta
    np.testing.assert_allclose(z, [[0.25, -0.25], [-0.25, 0.25]], atol=1e-15)
    np.testing.assert_allclose(z, matrix_power_lag_sum(mdp, sol.policy, rho.rho, 10), atol=1e-15)


@pytest.mark.parametrize("lam", [(0.3, -0.7), (0.9, 0.2), (-0.5, -0.5)])
def test_exact_matches_matrix_powers(grid7, lam):
    sol, rho = solved(grid7, lam)
    z = friction_exact(grid7, sol, rho, T=300)
    np.testing.assert_allclose(z.raw, matrix_power_lag_sum(grid7, sol.policy, rho.rho, 300), atol=1e-10)


def test_diagonal_dominates_reflection(grid7):
    traces = {}
    for lam in [(0.5, 0.5), (0.5, -0.5)]:
        sol, rho = solved(grid7, lam)
        traces[lam] = friction_exact(grid7, sol, rho, T=2000).trace
    assert traces[(0.5, 0.5)] >= 10 * traces[(0.5, -0.5)]


def test_non_stationary_rho_rejected(grid7):
    sol, rho = solved(grid7, [0.1, 0.2])
    bad = type(rho)(rho=np.full(196, 1 / 196))
    with pytest.raises(ConfigError):
        friction_exact(grid7, sol, bad, T=10)
    with pytest.raises(ConfigError):
        friction_exact(grid7, sol, type(rho)(rho=np.ones(5) / 5), T=10)


def test_truncation_self_consistency(grid7):
    sol, rho = solved(grid7, [0.8, -0.3])
    a = friction_exact(grid7, sol, rho, T=2000)
    b = friction_exact(grid7, sol, rho, T=2500)
    assert a.tail < 1e-12
    assert np.max(np.abs(a.zeta - b.zeta)) <= 500 * a.tail + 1e-15


def test_dependent_feature_gives_singular_tensor(grid7):
    extra = grid7.features[..., :1] + grid7.features[..., 1:]
    mdp = TabularMdp(grid7.transitions, np.concatenate([grid7.features, extra], axis=-1))
    sol, rho = solved(mdp, [0.4, -0.1, 0.0])
    z = friction_exact(mdp, sol, rho, T=2000).zeta
    assert abs(np.linalg.det(z)) <= 1e-10 * np.trace(z) ** 3


def test_exact_tensor_is_psd(grid7):
    sol, rho = solved(grid7, [0.7, 0.69])
    z = friction_exact(grid7, sol, rho, T=2000)
    np.testing.assert_allclose(z.zeta, z.zeta.T, atol=1e-9)
    assert np.linalg.eigvalsh(z.raw).min() >= -1e-8 * np.trace(z.raw)
    assert np.linalg.eigvalsh(z.zeta).min() >= -1e-12 * z.trace


def test_sampled_constant_series():
    assert friction_sampled(np.full(50, 2.5), T=5).zeta[0, 0] == 0.0


def test_sampled_alternating_series():
    x = np.tile([1.0, -1.0], 50)
    c = autocovariance_fft(x, 1)[:, 0, 0]
    assert c[0] == pytest.approx(1.0, abs=1e-12)
    # population convention: (N-1)/N at lag one
    assert c[1] == pytest.approx(-99 / 100, abs=1e-12)
    assert friction_sampled(x, T=1).raw[0, 0] == pytest.approx(direct_autocov_sum(x, 1)[0, 0], abs=1e-12)


def test_sampled_iid_noise():
    rng = np.random.default_rng(11)
    sigma2, n, T = 2.0, 200_000, 50
    est = friction_sampled(rng.normal(0, np.sqrt(sigma2), n), T).raw[0, 0]
    # each lag-sum term has standard error about sigma2/sqrt(n)
    se = sigma2 * np.sqrt((2 * T + 2) / n)
    assert abs(est - sigma2) <= 3 * se


@pytest.mark.parametrize("n", [16, 100, 1000])
@pytest.mark.parametrize("which", ["1", "10", "half"])
def test_fft_matches_direct_sum(n, which):
    T = {"1": 1, "10": 10, "half": n // 2}[which]
    rng = np.random.default_rng(n + T)
    x = rng.normal(size=(n, 2)) + np.sin(np.arange(n))[:, None]
    fft = friction_sampled(x, T).raw
    direct = direct_autocov_sum(x, T)
    direct = 0.5 * (direct + direct.T)
    assert np.max(np.abs(fft - direct)) <= 1e-8 * np.max(np.abs(direct))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.integers(3, 60), elements=st.floats(-100, 100)), st.data())
def test_fft_matches_direct_property(x, data):
    T = data.draw(st.integers(1, len(x) - 1))
    fft = friction_sampled(x, T).raw[0, 0]
    direct = direct_autocov_sum(x, T)[0, 0]
    scale = max(1.0, np.sum(np.abs(x - x.mean())) ** 2 / len(x))
    assert abs(fft - direct) <= 1e-8 * scale


@pytest.mark.parametrize("n, T", [(5, 5), (5, 7), (5, 0)])
def test_sampled_bad_lengths(n, T):
    with pytest.raises(ConfigError):
        friction_sampled(np.arange(n, dtype=float), T)


def test_sampled_empty():
    with pytest.raises(ConfigError):
        friction_sampled([], 1)


def test_identity_field_is_constant():
    zetas = np.broadcast_to(np.eye(2), (9, 9, 2, 2))
    raw, smooth = scalar_field(zetas, spacing=0.05, sigma=0.1)
    np.testing.assert_allclose(raw, np.log(2))
    np.testing.assert_allclose(smooth, np.log(2), atol=1e-12)
    _, smooth_log = scalar_field(zetas, spacing=0.05, sigma=0.1, log_first=True)
    np.testing.assert_allclose(smooth_log, np.log(2), atol=1e-12)


def test_spike_is_spread():
    zetas = np.zeros((41, 41, 1, 1))
    zetas[20, 20] = 1.0
    raw, smooth = scalar_field(zetas, spacing=0.05, sigma=0.1)
    assert smooth.max() < raw.max()
    assert np.exp(smooth).sum() == pytest.approx(1.0, rel=1e-6)


def test_trace_floor():
    assert log_trace(np.zeros((3, 2, 2))).tolist() == [np.log(1e-12)] * 3


@pytest.mark.slow
def test_gridworld_ridge(gridworld_field):
    _, smooth = scalar_field(gridworld_field.zeta, gridworld_field.grid.spacing, sigma=0.1)
    i, j = np.unravel_index(np.argmax(smooth), smooth.shape)
    assert i == j and gridworld_field.grid.point((i, j))[0] > 0
