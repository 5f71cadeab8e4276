import numpy as np
from hypothesis import given, strategies as st

from fkspde.rng import Moments, chunk_sizes, derive_seed, log_mean_jackknife, median_of_means, merge_all, parallel_map

values = st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40)


def test_derive_seed_deterministic_and_distinct():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    seeds = {derive_seed(7, i) for i in range(1000)}
    assert len(seeds) == 1000


@given(values, values, values)
def test_moments_merge_is_associative_and_exact(a, b, c):
    ma, mb, mc = Moments.of(a), Moments.of(b), Moments.of(c)
    left = ma.merge(mb).merge(mc)
    right = ma.merge(mb.merge(mc))
    allv = np.array(a + b + c)
    assert left.n == right.n == allv.size
    assert np.isclose(left.mean, allv.mean(), atol=1e-9)
    assert np.isclose(left.mean, right.mean, atol=1e-9)
    assert np.isclose(left.m2, np.sum((allv - allv.mean()) ** 2), rtol=1e-7, atol=1e-6)


@given(values, values)
def test_moments_merge_commutes(a, b):
    x, y = Moments.of(a).merge(Moments.of(b)), Moments.of(b).merge(Moments.of(a))
    assert x.n == y.n and np.isclose(x.mean, y.mean, atol=1e-9) and np.isclose(x.m2, y.m2, rtol=1e-7, atol=1e-6)


def test_chunk_sizes_partition():
    assert chunk_sizes(20000, 8192) == [8192, 8192, 3616]
    assert chunk_sizes(5, 8192) == [5]


def test_parallel_map_order_independent_of_workers():
    f = lambda i: np.random.default_rng(derive_seed(3, i)).random()
    assert parallel_map(f, 17, 1) == parallel_map(f, 17, 4)


def test_median_of_means_and_jackknife():
    v = np.arange(1, 101, dtype=float)
    med, err = median_of_means(v, 10)
    assert med == 50.5 and err > 0
    lv, lse = log_mean_jackknife(np.full(100, 2.0))
    assert np.isclose(lv, np.log(2.0)) and lse == 0.0
    assert merge_all([]).n == 0
