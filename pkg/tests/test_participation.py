import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddsra.participation import DataStats, divergence_bound, participation_plan, participation_rates


def _stats(n, sigma=1.0, delta=1.0, smooth=1.0):
    return DataStats(np.full(n, sigma), np.full(n, delta), np.full(n, smooth), np.ones(n))


def test_zero_epochs_gives_zero_bound():
    assert divergence_bound([0, 1], [4, 9], _stats(2), 0.1, 0) == 0.0


def test_single_device_hand_value():
    assert divergence_bound([0], [1], _stats(1), 1.0, 1) == pytest.approx(2.0)


def test_larger_batch_shrinks_sigma_term():
    stats = _stats(1, delta=0.0)
    values = [divergence_bound([0], [b], stats, 0.05, 3) for b in (1, 4, 16, 64)]
    assert all(b < a for a, b in zip(values, values[1:]))


def test_batch_weighted_mixture():
    stats = DataStats(np.array([1.0, 2.0]), np.array([0.5, 0.1]), np.array([2.0, 3.0]), np.ones(2))
    beta, K, batch = 0.1, 4, [4, 12]
    per = [(stats.sigma[n] / (stats.smoothness[n] * np.sqrt(batch[n])) + stats.delta[n] / stats.smoothness[n])
           * ((beta * stats.smoothness[n] + 1) ** K - 1) for n in range(2)]
    expected = 0.25 * per[0] + 0.75 * per[1]
    assert divergence_bound([0, 1], batch, stats, beta, K) == pytest.approx(expected, rel=1e-14)


def test_zero_smoothness_rejected():
    with pytest.raises(ValueError):
        DataStats(np.ones(1), np.ones(1), np.zeros(1), np.ones(1))


def test_equal_bounds_give_equal_rates():
    assert np.allclose(participation_rates([3.0] * 6, 3), 0.5)


def test_single_gateway_single_channel():
    assert participation_rates([0.7], 1).tolist() == [1.0]


def test_inverse_weights():
    assert np.allclose(participation_rates([1.0, 2.0, 4.0], 1), [4 / 7, 2 / 7, 1 / 7])


def test_clipped_rates_are_not_redistributed():
    rates = participation_rates([0.01, 1.0, 1.0, 1.0], 2)
    assert rates[0] == 1.0
    assert np.allclose(rates[1:], 2 * 1.0 / (100 + 3))


@pytest.mark.parametrize("phi", [[1.0, 0.0], [1.0, -1.0], [1.0, np.inf]])
def test_degenerate_bounds_rejected(phi):
    with pytest.raises(ValueError):
        participation_rates(phi, 1)


bounds = st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=8)


@given(bounds, st.floats(1e-3, 1e3))
def test_scale_invariance(phi, c):
    M = len(phi)
    J = max(1, M // 2)
    assert np.allclose(participation_rates(phi, J), participation_rates(np.array(phi) * c, J), rtol=1e-9)


@given(bounds)
def test_rates_in_unit_interval_and_ordered(phi):
    J = max(1, len(phi) // 2)
    rates = participation_rates(phi, J)
    assert np.all((rates >= 0) & (rates <= 1))
    if np.all(rates < 1):
        assert rates.sum() == pytest.approx(J, rel=1e-9)
    order = np.argsort(phi)
    assert np.all(np.diff(rates[order]) <= 1e-12)


def test_plan_for_environment(env):
    stats = _stats(env.n_devices, sigma=0.5, delta=0.2, smooth=1.5)
    plan = participation_plan(env, stats, 0.01)
    assert plan.divergence.shape == plan.rates.shape == (env.n_gateways,)
    assert np.all(plan.divergence > 0)
    assert np.all((plan.rates > 0) & (plan.rates <= 1))
