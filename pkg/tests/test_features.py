import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from indextrack.exceptions import DegenerateDistributionError, FeatureUnavailableError, LookAheadError
from indextrack.features import (
    CdfTransformer,
    FeatureGridSpec,
    build_tensor,
    check_train_dates,
    daily_returns,
    fit_cdf,
    gather_tensors,
    kind_groups,
    rolling_statistics,
    transform_dataset,
)

SMALL = FeatureGridSpec(tau_offsets=(1, 3), window_lengths=(4, 7))


def _window_oracle(y, x):
    b, a = np.polyfit(x, y, 1)
    ex = y - x
    return [a, b, ex.mean(), ex.std(ddof=1), x.mean(), x.std(ddof=1)]


def test_grid_defaults_and_validation():
    spec = FeatureGridSpec()
    assert spec.shape == (6, 5, 4)
    assert spec.depth == 21 + 252 - 1
    with pytest.raises(ValueError):
        FeatureGridSpec(tau_offsets=(0, 2))
    with pytest.raises(ValueError):
        FeatureGridSpec(window_lengths=(10, 5))


def test_tensor_cells_match_per_window_regressions(rng):
    n = 40
    ri = rng.normal(0, 0.02, n)
    rm = rng.normal(0, 0.01, n)
    ri[0] = rm[0] = np.nan
    t = 30
    x = build_tensor(ri, rm, t - 1, SMALL)
    assert x.shape == SMALL.shape
    for g, tau in enumerate(SMALL.tau_offsets):
        for h, length in enumerate(SMALL.window_lengths):
            end = t - tau
            sl = slice(end - length + 1, end + 1)
            np.testing.assert_allclose(x[:, g, h], _window_oracle(ri[sl], rm[sl]), rtol=1e-9, atol=1e-13)


def test_flat_market_window_gives_zero_slope():
    ri = np.r_[np.nan, np.linspace(-0.01, 0.01, 20)]
    rm = np.r_[np.nan, np.full(20, 0.001)]
    x = build_tensor(ri, rm, 19, SMALL)
    assert (x[1] == 0).all()
    assert (x[5] == 0).all()


def test_build_tensor_needs_history(rng):
    r = rng.normal(size=12)
    with pytest.raises(FeatureUnavailableError):
        build_tensor(r, r, 5, SMALL)


def test_gather_matches_build_tensor(rng):
    n, m = 60, 3
    prices = 100 * np.cumprod(1 + rng.normal(0, 0.01, (n, m)), axis=0)
    index = 100 * np.cumprod(1 + rng.normal(0, 0.01, n))
    ri, rm = daily_returns(prices), daily_returns(index)
    stats = rolling_statistics(ri, rm, SMALL)
    tens = gather_tensors(stats, [20, 45], [1, 2], SMALL)
    np.testing.assert_array_equal(tens[0], build_tensor(ri[:, 1], rm, 19, SMALL))
    np.testing.assert_array_equal(tens[1], build_tensor(ri[:, 2], rm, 44, SMALL))


def test_cells_ignore_later_prices(rng):
    n = 60
    ri = rng.normal(size=n)
    rm = rng.normal(size=n)
    a = rolling_statistics(ri, rm, SMALL)
    ri2, rm2 = ri.copy(), rm.copy()
    ri2[40:] = 1e6
    rm2[40:] = -1e6
    b = rolling_statistics(ri2, rm2, SMALL)
    assert np.array_equal(a[:40], b[:40], equal_nan=True)


def test_empirical_cdf_rule():
    cdf = fit_cdf([3.0, 1.0, 2.0, 2.0])
    np.testing.assert_array_equal(cdf.knots, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(cdf.ordinates, [0.25, 0.5, 0.75])
    assert cdf(1.5) == 0.375
    assert cdf(-10.0) == 0.25 and cdf(10.0) == 0.75
    assert cdf.inverse(0.375) == 1.5
    with pytest.raises(DegenerateDistributionError):
        fit_cdf([1.0, 1.0])


@settings(max_examples=60, deadline=None)
@given(st.integers(10, 2000), st.integers(0, 2**32 - 1))
def test_cdf_roundtrip_and_uniformity(n, seed):
    x = np.random.default_rng(seed).standard_t(3, size=n)
    cdf = fit_cdf(x)
    np.testing.assert_allclose(cdf.inverse(cdf(x)), x, rtol=0, atol=1e-12)
    u = np.sort(cdf(x))
    ecdf = np.arange(1, n + 1) / (n + 1)
    assert np.max(np.abs(u - ecdf)) <= 2 / (n + 1) + 1e-15


def test_cdf_transformer_groups_and_inverse(rng):
    X = rng.normal(size=(50, 4))
    tr = CdfTransformer().fit(X)
    U = tr.transform(X)
    assert U.min() > 0 and U.max() < 1
    np.testing.assert_allclose(tr.inverse_transform(U), X, atol=1e-12)
    pooled = CdfTransformer(groups=[0, 0, 1, 1]).fit(X)
    assert pooled.cdfs_[0] is pooled.cdfs_[1]
    assert pooled.get_params() == {"groups": [0, 0, 1, 1]}
    assert kind_groups(SMALL).tolist() == [0] * 4 + [1] * 4 + [2] * 4 + [3] * 4 + [4] * 4 + [5] * 4


def test_transform_dataset_rejects_look_ahead(rng):
    X = rng.normal(size=(20, 3))
    y = rng.normal(size=(20, 3))
    steps = np.arange(100, 120)
    with pytest.raises(LookAheadError):
        transform_dataset(X, y, steps, (100, 118))
    out = transform_dataset(X, y, steps, (100, 119), X[:5], y[:5])
    assert out[2].shape == (5, 3)
    check_train_dates([5, 6], (5, 6))
