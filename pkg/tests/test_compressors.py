import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedsketch.compressors import (
    CompressorSpec,
    FillMode,
    Kind,
    ValueMode,
    apply_compressor,
    compressor_stats,
    heaprix_decode,
    heaprix_device,
    heaprix_server,
    heaprix_share,
    heavy_support,
    heavymix,
    privix,
    privix_share,
    residual_family,
)
from fedsketch.errors import DimensionError, IncompatibleSketchError, MissingOracleError, ParameterError
from fedsketch.sketch import compress, derive_family, l2_estimate, point_query_all, table_mean

from . import oracles

seeds = st.integers(0, 2**32 - 1)


def spike(d, i, value=5.0):
    x = np.zeros(d)
    x[i] = value
    return x


# -- privix ---------------------------------------------------------------------------


def test_privix_zero():
    f = derive_family(0, 0, 5, 8, 16)
    assert not np.any(privix(compress(np.zeros(16), f), f).values)


def test_privix_one_sparse_by_row_enumeration():
    f = derive_family(3, 0, 5, 8, 16)
    x = spike(16, 3)
    s = compress(x, f)
    expected = oracles.privix_by_rows(s.values, f.buckets, f.signs, 16)
    out = privix(s, f)
    assert out.support is None
    assert np.array_equal(out.values, expected)
    assert out.values[3] == 5.0


def test_privix_rejects_foreign_family():
    s = compress(np.ones(16), derive_family(3, 0, 5, 8, 16))
    with pytest.raises(IncompatibleSketchError):
        privix(s, derive_family(4, 0, 5, 8, 16))


# -- heavymix -------------------------------------------------------------------------


def test_heavymix_one_sparse_oracle():
    f = derive_family(1, 0, 5, 8, 32)
    x = spike(32, 3)
    out = heavymix(compress(x, f), f, 1, x)
    assert np.array_equal(out.values, x)
    assert out.support.tolist() == [3]


def test_heavymix_full_budget_returns_input():
    f = derive_family(1, 0, 3, 4, 20)
    x = np.random.default_rng(0).standard_normal(20)
    out = heavymix(compress(x, f), f, 20, x)
    assert np.array_equal(out.values, x)
    assert out.support.tolist() == list(range(20))


@given(seed=seeds, d=st.integers(1, 50), data=st.data())
def test_support_size_and_oracle_values(seed, d, data):
    hb = data.draw(st.integers(1, d))
    fill = data.draw(st.sampled_from(list(FillMode)))
    f = derive_family(seed, 0, 3, 6, d)
    x = np.random.default_rng(seed).standard_normal(d)
    s = compress(x, f)
    out = heavymix(s, f, hb, x, ValueMode.ORACLE, fill)
    assert out.support.size == min(hb, d)
    assert np.unique(out.support).size == out.support.size
    assert np.array_equal(out.values[out.support], x[out.support])
    off = np.setdiff1d(np.arange(d), out.support)
    assert not np.any(out.values[off])
    est = heavymix(s, f, hb, None, ValueMode.ESTIMATE, fill)
    assert np.array_equal(est.support, out.support)
    assert np.array_equal(est.values[est.support], point_query_all(s, f)[est.support])


def test_heavy_set_uses_squared_threshold():
    f = derive_family(8, 0, 5, 16, 64)
    x = np.random.default_rng(2).standard_normal(64) * 0.1
    x[[4, 9]] = [3.0, -2.0]
    s = compress(x, f)
    g_hat = point_query_all(s, f)
    heavy = {i for i in range(64) if g_hat[i] ** 2 >= l2_estimate(s) / 4}
    support, _ = heavy_support(s, f, 4)
    assert heavy <= set(support.tolist())
    assert {4, 9} <= heavy


def test_overflowing_heavy_set_keeps_largest_with_low_index_ties():
    f = derive_family(0, 0, 3, 64, 64)  # lossless, so g_hat == x
    x = np.zeros(64)
    x[[10, 20, 30, 40]] = [1.0, -1.0, 2.0, 1.0]
    support, _ = heavy_support(compress(x, f), f, 2)
    assert support.tolist() == [10, 30]


def test_ranked_fill_takes_next_largest():
    f = derive_family(0, 0, 3, 64, 64)
    x = np.zeros(64)
    x[5] = 10.0
    x[[7, 8, 50]] = [0.3, -0.2, 0.1]
    support, _ = heavy_support(compress(x, f), f, 3, FillMode.RANKED)
    assert support.tolist() == [5, 7, 8]


def test_random_fill_is_seeded_and_avoids_heavy():
    f = derive_family(0, 0, 3, 64, 64)
    x = np.zeros(64)
    x[5] = 10.0
    a, _ = heavy_support(compress(x, f), f, 6, FillMode.RANDOM)
    b, _ = heavy_support(compress(x, f), f, 6, FillMode.RANDOM)
    assert np.array_equal(a, b)
    assert 5 in a and a.size == 6


def test_heavymix_errors():
    f = derive_family(0, 0, 3, 8, 16)
    s = compress(np.ones(16), f)
    with pytest.raises(MissingOracleError):
        heavymix(s, f, 2, None, ValueMode.ORACLE)
    with pytest.raises(DimensionError):
        heavymix(s, f, 2, np.ones(15))
    for hb in (0, 17):
        with pytest.raises(ParameterError):
            heavymix(s, f, hb)


# -- heaprix --------------------------------------------------------------------------


@given(seed=seeds, d=st.integers(2, 40), data=st.data())
def test_heaprix_device_exact_cases(seed, d, data):
    f = derive_family(seed, 0, 3, 5, d)
    i = data.draw(st.integers(0, d - 1))
    x = spike(d, i, data.draw(st.floats(-100, 100).filter(lambda v: v != 0)))
    g_hat = np.abs(point_query_all(compress(x, f), f))
    # a colliding coordinate can read the same magnitude; ties go to the lower index
    if not np.any(g_hat[:i] == g_hat[i]):
        assert np.array_equal(heaprix_device(x, f, 1).values, x)
    y = np.random.default_rng(seed).standard_normal(d)
    assert np.array_equal(heaprix_device(y, f, d).values, y)
    assert not np.any(heaprix_device(np.zeros(d), f, 1).values)


def test_heaprix_device_dimension_error():
    f = derive_family(0, 0, 3, 8, 16)
    with pytest.raises(DimensionError):
        heaprix_device(np.ones(3), f, 1)


def test_heaprix_server_one_sparse():
    f = derive_family(6, 0, 5, 8, 32)
    x = spike(32, 17, -4.0)
    s = compress(x, f)
    s_tilde = compress(heavymix(s, f, 1, None, ValueMode.ESTIMATE).values, f)
    assert np.array_equal(heaprix_server(s, s_tilde, f, 1).values, x)


def test_heaprix_server_single_device_lossless_matches_device():
    d = 24
    f = derive_family(6, 0, 3, d, d)
    x = np.random.default_rng(4).standard_normal(d)
    s = compress(x, f)
    s_tilde = compress(heavymix(s, f, d, None, ValueMode.ESTIMATE).values, f)
    server = heaprix_server(s, s_tilde, f, d).values
    assert np.array_equal(server, heaprix_device(x, f, d).values)
    assert np.array_equal(server, x)


def test_heaprix_server_mismatch():
    s = compress(np.ones(16), derive_family(0, 0, 3, 8, 16))
    other = compress(np.ones(16), derive_family(0, 1, 3, 8, 16))
    with pytest.raises(IncompatibleSketchError):
        heaprix_server(s, other, derive_family(0, 0, 3, 8, 16), 2)


def test_heaprix_decode_is_server_with_own_heavy_part():
    f = derive_family(2, 0, 5, 8, 40)
    s = compress(np.random.default_rng(0).standard_normal(40), f)
    heavy = heavymix(s, f, 4, None, ValueMode.ESTIMATE).values
    assert np.array_equal(heaprix_decode(s, f, 4).values, heaprix_server(s, compress(heavy, f), f, 4).values)


# -- shares ---------------------------------------------------------------------------


@given(seed=seeds, parties=st.integers(1, 6), t=st.integers(1, 6))
def test_shares_average_to_the_decode(seed, parties, t):
    d = 30
    rng = np.random.default_rng(seed)
    f = derive_family(seed, 0, t, 7, d)
    tables = [compress(rng.standard_normal(d), f) for _ in range(parties)]
    weights = rng.integers(1, 4, size=parties).astype(float)
    s = table_mean(tables, weights)
    mean = lambda vs: sum(w * v for w, v in zip(weights, vs)) / weights.sum()  # noqa: E731
    got = mean([privix_share(tb, s, f).values for tb in tables])
    assert np.allclose(got, privix(s, f).values, rtol=0, atol=1e-12)
    heavy = heavymix(s, f, 5, None, ValueMode.ESTIMATE).values
    s_tilde = compress(heavy, f)
    got = mean([heaprix_share(tb, s, s_tilde, f, 5).values for tb in tables])
    assert np.allclose(got, heaprix_server(s, s_tilde, f, 5).values, rtol=0, atol=1e-12)


@given(seed=seeds, t=st.integers(1, 6))
def test_own_share_is_the_decode(seed, t):
    f = derive_family(seed, 0, t, 7, 30)
    s = compress(np.random.default_rng(seed).standard_normal(30), f)
    assert np.array_equal(privix_share(s, s, f).values, privix(s, f).values)


# -- Monte Carlo helpers --------------------------------------------------------------


def test_stats_zero_vector_and_single_trial():
    spec = CompressorSpec(Kind.PRIVIX, 8, 3)
    stats = compressor_stats(spec, np.zeros(16), 10)
    assert not np.any(stats.mean_error) and stats.mean_squared_error == 0.0
    one = compressor_stats(spec, np.ones(16), 1)
    assert np.isfinite(one.mean_squared_error) and one.mean_error.shape == (16,)
    with pytest.raises(ParameterError):
        compressor_stats(spec, np.ones(16), 0)


def test_every_kind_maps_zero_to_zero():
    f = derive_family(0, 0, 3, 8, 16)
    for kind in Kind:
        assert not np.any(apply_compressor(CompressorSpec(kind, 8, 3, 2), np.zeros(16), f))


def _heaprix_errors(x, trials, independent):
    out = np.empty((trials, x.size))
    for r in range(trials):
        f = derive_family(3, r, 5, 8, x.size)
        g = residual_family(f) if independent else None
        out[r] = heaprix_device(x, f, 4, residual=g).values - x
    return out


def _z_scores(errors):
    return errors.mean(axis=0) / (errors.std(axis=0, ddof=1) / np.sqrt(errors.shape[0]))


def test_heaprix_with_independent_residual_is_unbiased():
    x = np.random.default_rng(5).standard_normal(32)
    assert np.all(np.abs(_z_scores(_heaprix_errors(x, 4000, True))) <= 4)


def test_heaprix_with_shared_family_is_measurably_biased():
    # the support and the residual's collisions come from the same hashes
    x = np.random.default_rng(5).standard_normal(32)
    shared = _heaprix_errors(x, 4000, False)
    assert np.max(np.abs(_z_scores(shared))) > 4
    # the bias is still small next to the spread of a single estimate
    assert np.max(np.abs(shared.mean(axis=0))) < 0.5 * np.sqrt(np.mean(np.sum(shared**2, axis=1)) / x.size)


def test_residual_family_geometry():
    f = derive_family(1, 2, 3, 8, 16)
    g = residual_family(f)
    assert (g.t, g.m, g.d, g.round_tag) == (3, 8, 16, 2) and g.fingerprint != f.fingerprint
    with pytest.raises(IncompatibleSketchError):
        heaprix_device(np.ones(16), f, 2, residual=derive_family(1, 2, 3, 9, 16))


def test_spec_validation():
    with pytest.raises(ParameterError):
        CompressorSpec(Kind.PRIVIX, 0, 3)
    with pytest.raises(ParameterError):
        CompressorSpec(Kind.HEAVYMIX, 8, 3, heavy_budget=0)
    with pytest.raises(ValueError):
        CompressorSpec("topk", 8, 3)
    with pytest.raises(ParameterError):
        CompressorSpec(Kind.HEAPRIX, 8, 3, heavy_budget=20).check_dimension(16)
    CompressorSpec(Kind.PRIVIX, 8, 3, heavy_budget=0).check_dimension(4)


def test_shares_are_own_vectors_when_lossless():
    d = 12
    f = derive_family(1, 0, 3, d, d)
    rng = np.random.default_rng(0)
    xs = [rng.standard_normal(d) for _ in range(3)]
    tables = [compress(x, f) for x in xs]
    s = table_mean(tables)
    s_tilde = compress(heavymix(s, f, 4, None, ValueMode.ESTIMATE).values, f)
    for x, tb in zip(xs, tables):
        assert np.allclose(heaprix_share(tb, s, s_tilde, f, 4).values, x, rtol=0, atol=1e-12)
        assert np.allclose(privix_share(tb, s, f).values, x, rtol=0, atol=1e-12)
