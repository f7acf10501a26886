import bz2
import gzip
import itertools
import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference
from sqnls.errors import BatchTooLarge, DimensionMismatch, NonMonotoneIndices, ParseError
from sqnls.problems import (
    LogisticOracle,
    RosenbrockOracle,
    SparseDataset,
    load_libsvm,
    make_batch_sampler,
    make_classification,
    rosenbrock,
    write_libsvm,
)


def write(tmp_path, text, name="d.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLibsvm:
    def test_basic_line(self, tmp_path):
        ds = load_libsvm(write(tmp_path, "+1 1:0.5 3:-2\n"))
        assert ds.labels.tolist() == [1.0]
        assert ds.dim == 3
        np.testing.assert_array_equal(ds.features.toarray(), [[0.5, 0.0, -2.0]])

    def test_zero_label_maps_to_minus_one(self, tmp_path):
        ds = load_libsvm(write(tmp_path, "0 2:1\n1 1:1\n"))
        assert ds.labels.tolist() == [-1.0, 1.0]
        np.testing.assert_array_equal(ds.features.toarray()[0], [0.0, 1.0])

    def test_one_two_labels(self, tmp_path):
        ds = load_libsvm(write(tmp_path, "2 1:1\n1 1:2\n"))
        assert ds.labels.tolist() == [1.0, -1.0]

    def test_blank_and_comment_lines(self, tmp_path):
        ds = load_libsvm(write(tmp_path, "# header\n+1 1:1\n\n-1 2:1  # trailing\n+1 1:3\n"))
        assert ds.n == 3

    def test_empty_feature_row(self, tmp_path):
        ds = load_libsvm(write(tmp_path, "-1\n+1 4:1\n"))
        assert ds.n == 2 and ds.features[0].nnz == 0

    def test_n_features_override(self, tmp_path):
        assert load_libsvm(write(tmp_path, "+1 2:1\n"), n_features=10).dim == 10
        with pytest.raises(ParseError):
            load_libsvm(write(tmp_path, "+1 5:1\n"), n_features=3)

    @pytest.mark.parametrize("text,line", [
        ("+1 1:1\n+1 x:1\n", 2),
        ("+1 1\n", 1),
        ("abc 1:1\n", 1),
        ("+1 0:1\n", 1),
        ("+1 1:nan\n", 1),
    ])
    def test_parse_errors_carry_line(self, tmp_path, text, line):
        with pytest.raises(ParseError) as err:
            load_libsvm(write(tmp_path, text))
        assert err.value.lineno == line
        assert f"line {line}" in str(err.value)

    def test_non_monotone(self, tmp_path):
        with pytest.raises(NonMonotoneIndices) as err:
            load_libsvm(write(tmp_path, "+1 1:1\n-1 3:1 2:1\n"))
        assert err.value.lineno == 2

    def test_multiclass_rejected(self, tmp_path):
        with pytest.raises(ParseError):
            load_libsvm(write(tmp_path, "1 1:1\n2 1:1\n3 1:1\n"))

    @pytest.mark.parametrize("opener,suffix", [(gzip.open, ".gz"), (bz2.open, ".bz2")])
    def test_compressed(self, tmp_path, opener, suffix):
        p = tmp_path / f"d.txt{suffix}"
        with opener(p, "wt") as fh:
            fh.write("+1 1:1 2:2\n-1 2:3\n")
        ds = load_libsvm(p)
        np.testing.assert_array_equal(ds.features.toarray(), [[1, 2], [0, 3]])

    def test_round_trip(self, tmp_path):
        ds = make_classification(40, 6, seed=3)
        write_libsvm(ds, tmp_path / "r.txt")
        back = load_libsvm(tmp_path / "r.txt", n_features=6)
        np.testing.assert_array_equal(back.labels, ds.labels)
        np.testing.assert_array_equal(back.features.toarray(), ds.features.toarray())


class TestSampler:
    def test_full_batch(self):
        u = make_batch_sampler(7, 7)(np.random.default_rng(0))
        assert sorted(u.tolist()) == list(range(7))

    def test_unit_batch(self):
        u = make_batch_sampler(7, 1)(np.random.default_rng(0))
        assert len(u) == 1 and 0 <= u[0] < 7

    def test_too_large(self):
        with pytest.raises(BatchTooLarge):
            make_batch_sampler(3, 4)

    def test_uniform(self):
        sample = make_batch_sampler(10, 3)
        rng = np.random.default_rng(1)
        counts = np.zeros(10)
        draws = 10**5
        for _ in range(draws):
            u = sample(rng)
            assert len(set(u.tolist())) == 3
            counts[u] += 1
        freq = counts / draws
        sd = math.sqrt(0.3 * 0.7 / draws)
        assert np.all(np.abs(freq - 0.3) <= 3 * sd + 1e-3)


def small_logistic(n=50, d=10, seed=0, l2=None, b=None):
    data = make_classification(n, d, seed=seed)
    return LogisticOracle(data, l2_weight=l2, batch_size=b or n)


class TestLogistic:
    def test_zero_weights(self):
        o = small_logistic()
        ev = o.evaluate(np.zeros(10), np.arange(50))
        np.testing.assert_allclose(ev.per_sample_f, math.log(2), rtol=1e-15)

    def test_single_sample(self):
        data = SparseDataset(np.array([1.0]), sp.csr_matrix(np.array([[1.0, 0.0]])))
        o = LogisticOracle(data, l2_weight=0.0)
        assert o.evaluate(np.array([1.0, 0.0]), np.array([0])).f == pytest.approx(0.313262, abs=1e-6)

    def test_gradient_fd(self):
        o = small_logistic(l2=0.01)
        u = np.arange(50)
        x = np.random.default_rng(2).standard_normal(10)
        fd = central_difference(lambda z: o.evaluate(z, u, grad=False).f, x)
        g = o.evaluate(x, u).g
        assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(g)

    def test_large_margins_stable(self):
        o = small_logistic()
        ev = o.evaluate(np.full(10, 1e4), np.arange(50))
        assert np.isfinite(ev.f) and np.all(np.isfinite(ev.g))

    def test_full_batch_equals_full_gradient(self):
        o = small_logistic(b=50)
        x = np.random.default_rng(3).standard_normal(10)
        u = np.random.default_rng(4).permutation(50)
        np.testing.assert_allclose(o.evaluate(x, u).g, o.full_gradient(x), rtol=1e-12)
        assert o.evaluate(x, u).f == pytest.approx(o.full_cost(x), rel=1e-13)

    def test_subset_expectation_exact(self):
        n, b = 7, 3
        data = make_classification(n, 4, seed=5)
        o = LogisticOracle(data, batch_size=b)
        x = np.random.default_rng(6).standard_normal(4)
        subsets = list(itertools.combinations(range(n), b))
        mean_f = np.mean([o.evaluate(x, np.array(s), grad=False).f for s in subsets])
        assert mean_f == pytest.approx(o.full_cost(x), rel=1e-12)

    def test_pure(self):
        o = small_logistic(b=10)
        u = o.sample_u(np.random.default_rng(0))
        x = np.ones(10)
        a, b = o.evaluate(x, u), o.evaluate(x, u)
        assert a.f == b.f and np.array_equal(a.g, b.g)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            small_logistic().evaluate(np.zeros(3), np.arange(5))

    def test_default_l2_is_one_over_n(self):
        assert small_logistic(n=40).l2_weight == 1 / 40

    def test_sparse_path_matches_dense(self):
        data = make_classification(60, 30, seed=7)
        X = data.features.toarray()
        X[np.abs(X) < 0.3] = 0.0  # below the densify threshold
        sparse = SparseDataset(data.labels, sp.csr_matrix(X))
        o = LogisticOracle(sparse, batch_size=60)
        assert sp.issparse(o._X)
        x = np.random.default_rng(8).standard_normal(30)
        dense = LogisticOracle(SparseDataset(data.labels, sp.csr_matrix(X)), batch_size=60)
        dense._X = X
        u = np.arange(60)
        np.testing.assert_allclose(o.evaluate(x, u).g, dense.evaluate(x, u).g, rtol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10**6), t=st.floats(0, 1))
    def test_convex(self, seed, t):
        o = small_logistic(n=30, d=5)
        rng = np.random.default_rng(seed)
        x1, x2 = rng.standard_normal(5) * 3, rng.standard_normal(5) * 3
        lhs = o.full_cost(t * x1 + (1 - t) * x2)
        assert lhs <= t * o.full_cost(x1) + (1 - t) * o.full_cost(x2) + 1e-12


class TestClassification:
    def test_margin_and_noise(self):
        ds = make_classification(2000, 10, margin=0.1, flip=0.05, seed=1)
        X = ds.features.toarray()
        assert ds.n == 2000 and ds.dim == 10
        norms = np.linalg.norm(X, axis=1)
        assert np.all(norms > 0)
        # the labels agree with some hyperplane on about 95% of rows
        w = np.linalg.lstsq(X, ds.labels, rcond=None)[0]
        assert 0.9 < np.mean(np.sign(X @ w) == ds.labels) < 0.99

    def test_seeded(self):
        a = make_classification(20, 3, seed=4)
        b = make_classification(20, 3, seed=4)
        np.testing.assert_array_equal(a.features.toarray(), b.features.toarray())


class TestRosenbrock:
    def test_minimum(self):
        f, g = rosenbrock(np.array([1.0, 1.0]))
        assert f == 0 and np.all(g == 0)

    def test_origin_gradient(self):
        np.testing.assert_array_equal(rosenbrock(np.zeros(2))[1], [-2.0, 0.0])

    def test_gradient_fd(self):
        rng = np.random.default_rng(0)
        o = RosenbrockOracle(0.1)
        for _ in range(20):
            x = rng.uniform(-2, 2, 2)
            fd = central_difference(lambda z: o.evaluate(z, 7, grad=False).f, x)
            g = rosenbrock(x)[1]
            assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, np.linalg.norm(g))

    def test_noise_mean(self):
        o = RosenbrockOracle(0.1)
        x = np.array([0.3, -0.2])
        rng = np.random.default_rng(1)
        vals = np.array([o.evaluate(x, o.sample_u(rng), grad=False).f for _ in range(10**5)])
        assert abs(vals.mean() - o.full_cost(x)) <= 3 * 0.1 / math.sqrt(10**5)

    def test_same_seed_same_noise(self):
        o = RosenbrockOracle(0.1)
        a = o.evaluate(np.zeros(2), 11)
        b = o.evaluate(np.ones(2), 11)
        assert a.f - o.full_cost(np.zeros(2)) == pytest.approx(b.f - o.full_cost(np.ones(2)), abs=1e-12)

    def test_noiseless(self):
        o = RosenbrockOracle(0.0)
        assert o.evaluate(np.zeros(2), 3).f == 1.0

    def test_negative_noise_rejected(self):
        with pytest.raises(ValueError):
            RosenbrockOracle(-1.0)
