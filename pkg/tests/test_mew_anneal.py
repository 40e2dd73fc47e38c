import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermocurriculum.errors import ConfigError
from thermocurriculum.friction import friction_sampled
from thermocurriculum.mew_anneal import (
    AnnealConfig,
    MewController,
    compare_schedules,
    linear_beta_schedule,
    mew_step,
    run_anneal,
    scalar_friction,
)

LAM = [1.0, 0.5]


def loglog_slope(k, beta, lo=1e3, hi=1e5):
    k = np.asarray(k, dtype=float)
    sel = (k >= lo) & (k <= hi)
    return np.polyfit(np.log(k[sel]), np.log(np.asarray(beta)[sel]), 1)[0]


def test_mew_step_arithmetic():
    assert mew_step(1.0, 0.0, 1.0, epsilon=1.0) == 2.0
    assert mew_step(2.0, 3.0, 0.1, epsilon=0.0) - 2.0 == pytest.approx(0.1 / (2 * np.sqrt(3)), abs=1e-15)
    assert mew_step(2.0, 3.0, 0.1, epsilon=1e-300) - 2.0 == pytest.approx(0.02887, abs=1e-5)


@pytest.mark.parametrize("args", [(np.nan, 1.0, 1.0), (1.0, np.inf, 1.0), (0.0, 1.0, 1.0), (1.0, -1.0, 1.0)])
def test_mew_step_rejects_bad_input(args):
    with pytest.raises(ConfigError):
        mew_step(*args)


def test_constant_friction_sqrt_law():
    beta, ks, betas = 5.0, [], []
    for k in range(1, 100_001):
        beta = mew_step(beta, 1.0, 1.0)
        ks.append(k)
        betas.append(beta)
    assert 0.45 <= loglog_slope(ks, betas) <= 0.55


@settings(max_examples=50)
@given(st.floats(0.1, 100), st.floats(0, 10), st.floats(1e-6, 1))
def test_squared_increment(beta, zeta, eta):
    new = mew_step(beta, zeta, eta)
    dbeta = new - beta
    assert new ** 2 - beta ** 2 == pytest.approx(2 * eta / np.sqrt(zeta + 1e-8) + dbeta ** 2, rel=1e-9)


def test_scalar_friction_constant_stream():
    assert scalar_friction(np.full(100, 0.3), 10) == 0.0
    beta = 5.0
    assert mew_step(beta, 0.0, 1e-3, 1e-8) - beta == pytest.approx(1e-3 / (beta * 1e-4))


def test_high_variance_cools_slower():
    rng = np.random.default_rng(5)
    noise = rng.normal(size=2000)
    z_lo, z_hi = scalar_friction(0.1 * noise, 20), scalar_friction(3.0 * noise, 20)
    assert z_hi > z_lo
    assert mew_step(5.0, z_hi, 1e-3) < mew_step(5.0, z_lo, 1e-3)


def test_window_matches_suffix():
    rng = np.random.default_rng(6)
    stream = rng.normal(size=12_000)
    ctrl = MewController(AnnealConfig(eta=1e-4, recency_N=5000))
    for r in stream:
        ctrl.observe(r)
    zeta, _ = ctrl.update()
    assert zeta == friction_sampled(stream[-5000:], 2500).zeta[0, 0]


def test_scalar_friction_too_short():
    with pytest.raises(ConfigError):
        scalar_friction(np.ones(10), 10)


def test_scale_covariance():
    rng = np.random.default_rng(7)
    x = rng.normal(size=3000) + 0.5 * np.sin(np.arange(3000) / 7)
    c = 4.0
    z1, z2 = scalar_friction(x, 50), scalar_friction(c * x, 50)
    assert z2 == pytest.approx(c ** 2 * z1, rel=1e-10)
    d1 = mew_step(5.0, z1, 1e-3, 1e-12) - 5.0
    d2 = mew_step(5.0, z2, 1e-3, 1e-12) - 5.0
    assert d2 == pytest.approx(d1 / c, rel=1e-6)


@pytest.mark.parametrize(
    "kwargs",
    [dict(eta=-1.0), dict(eta=1.0, epsilon=0.0), dict(eta=1.0, alpha_0=0.0),
     dict(eta=1.0, recency_N=10, max_lag_T=10), dict(eta=1.0, max_lag_T=0),
     dict(eta=1.0, steps_between_updates=0)],
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        AnnealConfig(**kwargs)


def test_config_default_lag():
    assert AnnealConfig(eta=1.0, recency_N=5000).max_lag_T == 2500


def test_synthetic_stream_power_law():
    rng = np.random.default_rng(0)
    ctrl = MewController(AnnealConfig(eta=1.0, recency_N=512, max_lag_T=10, alpha_0=0.2))
    for r in rng.normal(size=512):
        ctrl.observe(r)
    betas = []
    for r in rng.normal(size=20_000):
        ctrl.observe(r)
        ctrl.update()
        betas.append(ctrl.beta)
    assert 0.45 <= loglog_slope(np.arange(1, 20_001), betas, 1e3, 2e4) <= 0.55


def test_zero_speed_keeps_temperature(grid7):
    trace = run_anneal(grid7, LAM, AnnealConfig(eta=0.0, recency_N=200), 1000, seed=0)
    assert len(trace) == 900
    assert set(trace.alpha) == {0.2}


def test_alpha_strictly_decreasing(grid7):
    for seed in range(3):
        trace = run_anneal(grid7, LAM, AnnealConfig(eta=1e-4, recency_N=500, steps_between_updates=5), 4000, seed)
        assert np.all(np.diff(trace.alpha) < 0)
        assert np.all(np.diff(trace.beta) > 0)
        assert min(trace.alpha) > 0


def test_speed_orders_final_temperature(grid7):
    finals = [run_anneal(grid7, LAM, AnnealConfig(eta=eta, recency_N=500, steps_between_updates=5), 4000, 1).final_alpha
              for eta in (1e-6, 1e-5, 1e-4)]
    assert finals[0] > finals[1] > finals[2]


def test_trace_reproducible(grid7, tmp_path):
    cfg = AnnealConfig(eta=1e-4, recency_N=500, steps_between_updates=5)
    a = run_anneal(grid7, LAM, cfg, 3000, seed=4)
    b = run_anneal(grid7, LAM, cfg, 3000, seed=4)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "step,alpha,beta,zeta,mean_reward,delta_beta"


def test_alpha_min_stop(grid7):
    trace = run_anneal(grid7, LAM, AnnealConfig(eta=1.0, recency_N=100, alpha_min=0.05), 2000, seed=0)
    assert trace.stop_reason == "alpha_min"
    assert trace.final_alpha >= 0.05


def test_delta_smaller_when_friction_larger(grid7):
    trace = run_anneal(grid7, LAM, AnnealConfig(eta=1e-4, recency_N=300, steps_between_updates=3), 3000, 2)
    beta, zeta, delta = map(np.asarray, (trace.beta, trace.zeta, trace.delta_beta))
    prev_beta = beta - delta
    np.testing.assert_allclose(delta, 1e-4 / (prev_beta * np.sqrt(zeta + 1e-8)), rtol=1e-9)


def test_linear_beta_schedule_endpoints():
    sched = linear_beta_schedule(0.2, 0.05, 100)
    assert sched(0) == pytest.approx(0.2)
    assert sched(100) == pytest.approx(0.05)
    assert sched(50) == pytest.approx(1 / 12.5)


def test_compare_constant_schedules_agree(grid7):
    rows = compare_schedules(grid7, LAM, AnnealConfig(eta=1e-5, recency_N=300, steps_between_updates=5),
                             1500, seeds=(0, 1), constant_alphas=(0.1, 0.1), alpha_eval=0.1)
    const = [r for r in rows if r["schedule"] == "constant_0.1"]
    assert len(const) == 4
    assert len({r["theta_at_target"] for r in const}) == 1
    assert {r["schedule"] for r in rows} == {"mew", "linear_beta", "constant_0.1"}
