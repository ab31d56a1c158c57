"""Numerical primitives: quadrature, linear algebra, PAVA, RNG."""

import itertools

import numpy as np
import pytest

from survfuse import (DistributionSpec, NumericError, RngStream, SingularSystemError,
                      StepFunctionOnGrid, TimeGrid, least_squares, pava_isotonic,
                      rng_draw, solve_dense_linear, trapezoid_integral)
from survfuse.numerics import cumtrapz_prefix, cumtrapz_suffix

RNG = np.random.default_rng(20240811)


class TestTimeGrid:
    def test_validation(self):
        with pytest.raises(ValueError):
            TimeGrid(np.array([0.0]))
        with pytest.raises(ValueError):
            TimeGrid(np.array([0.0, 0.0, 1.0]))
        with pytest.raises(ValueError):
            TimeGrid(np.array([-1.0, 1.0]))
        with pytest.raises(NumericError):
            TimeGrid(np.array([0.0, np.nan]))

    def test_augmented_and_index(self):
        g = TimeGrid.uniform(1.0, 11)
        g2 = g.augmented([0.55, g.points[3]])
        assert 0.55 in g2.points and len(g2) == 12  # existing point not duplicated
        assert g.index_of(0.32) == 3
        assert g.index_of(0.38) == 4

    def test_spacings(self):
        g = TimeGrid(np.array([0.0, 0.5, 2.0]))
        assert np.allclose(g.spacings, [0.5, 1.5])


class TestTrapezoid:
    def test_constant(self):
        g = TimeGrid.uniform(1.0, 11)
        assert trapezoid_integral(np.ones(11), g) == pytest.approx(1.0, abs=1e-15)

    def test_linear_exact_on_irregular_grid(self):
        pts = np.sort(RNG.random(17))
        g = TimeGrid(np.concatenate([[0.0], pts, [1.0]]))
        assert trapezoid_integral(g.points, g) == pytest.approx(0.5, abs=1e-14)

    def test_quadratic_2000_points(self):
        g = TimeGrid.uniform(1.0, 2000)
        # oracle: analytic antiderivative of u^2 on [0,1]
        assert trapezoid_integral(g.points ** 2, g) == pytest.approx(1.0 / 3.0, abs=1e-6)

    def test_errors(self):
        g = TimeGrid.uniform(1.0, 5)
        with pytest.raises(ValueError):
            trapezoid_integral(np.ones(4), g)
        with pytest.raises(NumericError):
            trapezoid_integral(np.array([1.0, np.inf, 1, 1, 1]), g)

    def test_cumtrapz_against_direct(self):
        pts = np.concatenate([[0.0], np.sort(RNG.random(30)), [1.0]])
        f = np.cos(3 * pts)
        pre = cumtrapz_prefix(f, pts)
        g = TimeGrid(pts)
        for k in (1, 10, 31):
            assert pre[k] == pytest.approx(
                trapezoid_integral(f[:k + 1], TimeGrid(pts[:k + 1])), abs=1e-14)
        suf = cumtrapz_suffix(f, pts)
        assert np.allclose(pre + suf, pre[-1], atol=1e-14)


class TestDenseSolve:
    def test_identity(self):
        x = solve_dense_linear(np.eye(2), np.array([3.0, -1.0]))
        assert np.allclose(x, [3.0, -1.0])

    def test_diagonal(self):
        x = solve_dense_linear(np.diag([2.0, 4.0]), np.array([2.0, 8.0]))
        assert np.allclose(x, [1.0, 2.0])

    def test_random_wellconditioned_residual(self):
        A = RNG.normal(size=(20, 20)) + 10 * np.eye(20)
        b = RNG.normal(size=20)
        x = solve_dense_linear(A, b)
        assert np.max(np.abs(A @ x - b)) <= 1e-8 * (1 + np.max(np.abs(b)))

    def test_ill_conditioned_gets_ridged(self):
        A = np.diag([1.0, 1e-14])
        diag = {}
        solve_dense_linear(A, np.array([1.0, 0.0]), diag)
        assert diag["ridged"]

    def test_singular_raises(self):
        A = np.zeros((2, 2))
        with pytest.raises(SingularSystemError):
            solve_dense_linear(A, np.array([1.0, 1.0]))

    def test_nonfinite_raises(self):
        with pytest.raises(NumericError):
            solve_dense_linear(np.array([[np.nan, 0], [0, 1.0]]), np.zeros(2))


class TestLeastSquares:
    def test_exactly_determined(self):
        A = np.array([[2.0, 1.0], [1.0, 3.0]])
        b = np.array([4.0, 7.0])
        assert np.allclose(least_squares(A, b), np.linalg.solve(A, b))

    def test_overdetermined_consistent(self):
        X = RNG.normal(size=(30, 4))
        beta = np.array([1.0, -2.0, 0.5, 3.0])
        coef = least_squares(X, X @ beta)
        assert np.allclose(coef, beta, atol=1e-8)

    def test_matches_lstsq_oracle(self):
        X = RNG.normal(size=(50, 10))
        y = RNG.normal(size=50)
        oracle = np.linalg.lstsq(X, y, rcond=None)[0]
        assert np.allclose(least_squares(X, y), oracle, atol=1e-8)


def _pava_bruteforce(y, w):
    """Best nondecreasing fit by exhaustive search over block partitions."""
    n = len(y)
    best, best_sse = None, np.inf
    for pattern in itertools.product([0, 1], repeat=n - 1):
        blocks, start = [], 0
        for i, brk in enumerate(pattern):
            if brk:
                blocks.append((start, i + 1))
                start = i + 1
        blocks.append((start, n))
        means = [np.sum(y[a:b] * w[a:b]) / np.sum(w[a:b]) for a, b in blocks]
        if any(means[i] > means[i + 1] for i in range(len(means) - 1)):
            continue
        fit = np.concatenate([np.full(b - a, m) for (a, b), m in zip(blocks, means)])
        sse = np.sum(w * (y - fit) ** 2)
        if sse < best_sse - 1e-12:
            best_sse, best = sse, fit
    return best


class TestPava:
    def test_already_monotone(self):
        y = np.array([1.0, 2.0, 2.0, 5.0])
        assert np.allclose(pava_isotonic(y), y)

    def test_single_pool(self):
        assert np.allclose(pava_isotonic(np.array([2.0, 1.0])), [1.5, 1.5])

    def test_against_bruteforce(self):
        for _ in range(8):
            y = RNG.normal(size=8)
            w = RNG.random(8) + 0.5
            assert np.allclose(pava_isotonic(y, w), _pava_bruteforce(y, w), atol=1e-10)

    def test_properties(self):
        for _ in range(20):
            y = RNG.normal(size=25)
            w = RNG.random(25) + 0.1
            fit = pava_isotonic(y, w)
            assert np.all(np.diff(fit) >= -1e-12)
            assert np.sum(w * fit) == pytest.approx(np.sum(w * y), rel=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            pava_isotonic(np.array([]))
        with pytest.raises(ValueError):
            pava_isotonic(np.array([1.0]), np.array([0.0]))


class TestRng:
    def test_exponential_mean(self):
        s = RngStream(7)
        x = s.exponential(np.full(100_000, 2.0))
        assert np.mean(x) == pytest.approx(0.5, abs=0.01)

    def test_beta_1_1_is_uniform(self):
        s = RngStream(8)
        x = s.beta1(np.ones(100_000))
        xs = np.sort(x)
        ks = np.max(np.abs(xs - (np.arange(1, xs.size + 1) / xs.size)))
        assert ks < 0.01

    def test_beta_mean(self):
        s = RngStream(9)
        x = s.beta1(np.full(100_000, 0.75))
        assert np.mean(x) == pytest.approx(1.0 / 1.75, abs=0.01)

    def test_bit_identical_replay(self):
        a = RngStream(5, 3).uniform(1000)
        b = RngStream(5, 3).uniform(1000)
        assert np.array_equal(a, b)
        c = RngStream(5, 4).uniform(1000)
        assert not np.array_equal(a, c)

    def test_rng_draw_dispatch(self):
        s1, s2 = RngStream(1), RngStream(1)
        assert rng_draw(DistributionSpec("uniform"), s1, 5) == pytest.approx(s2.uniform(5))
        x = rng_draw(DistributionSpec("exponential", (3.0,)), RngStream(2), 10)
        assert np.all(x > 0)
        b = rng_draw(DistributionSpec("bernoulli", (0.5,)), RngStream(2), 10)
        assert set(np.unique(b)) <= {0.0, 1.0}

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            DistributionSpec("exponential", (-1.0,))
        with pytest.raises(ValueError):
            DistributionSpec("beta", (2.0, 1.0))   # only Beta(1, b) supported
        with pytest.raises(ValueError):
            DistributionSpec("bernoulli", (1.5,))
        with pytest.raises(ValueError):
            DistributionSpec("gamma", (1.0,))

    def test_subsample(self):
        idx = RngStream(3).subsample(100, 20)
        assert idx.size == 20 and np.unique(idx).size == 20


class TestStepFunction:
    def test_nearest_neighbor(self):
        g = TimeGrid(np.array([0.0, 1.0, 2.0]))
        f = StepFunctionOnGrid(g, np.array([10.0, 20.0, 30.0]))
        assert f(0.4) == 10.0
        assert f(0.6) == 20.0
        assert f(1.0) == 20.0
        with pytest.raises(ValueError):
            f(2.5)

    def test_alignment_required(self):
        g = TimeGrid(np.array([0.0, 1.0]))
        with pytest.raises(ValueError):
            StepFunctionOnGrid(g, np.array([1.0, 2.0, 3.0]))
