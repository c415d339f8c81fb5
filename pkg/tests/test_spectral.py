import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectral_uncertainty.errors import NotPSDError, UsageError
from spectral_uncertainty.kernels import KernelSpec, gram_matrix
from spectral_uncertainty.spectral import (
    SampleMatrix,
    Spectrum,
    covariance_oracle,
    decompose,
    spectrum_of,
    vne,
    vne_of_samples,
)

LN2 = math.log(2.0)
LIN = KernelSpec.linear()
RBF1 = KernelSpec.rbf(1.0)


def eye(d, i):
    v = np.zeros(d)
    v[i] = 1.0
    return v


def unit_rows(rng, n, d):
    X = rng.normal(size=(n, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def mp_vne(K):
    """High-precision VNE of K / n via mpmath's Jacobi eigensolver."""
    n = K.shape[0]
    with mpmath.workdps(40):
        A = mpmath.matrix(K.tolist()) / n
        ev = mpmath.eigsy(A, eigvals_only=True)
        return float(-sum(l * mpmath.log(l) for l in ev if l > mpmath.mpf("1e-30")))


def mp_decompose(groups, spec):
    """Independent brute-force route: high-precision eigenvalues per block."""
    groups = np.asarray(groups, dtype=float)
    n, m, _ = groups.shape
    total = mp_vne(gram_matrix(groups.reshape(n * m, -1), spec))
    epistemic = sum(mp_vne(gram_matrix(g, spec)) for g in groups) / n
    return total, total - epistemic, epistemic


class TestSpectrumOf:
    def test_rank_one(self):
        s = spectrum_of(np.ones((3, 3)))
        np.testing.assert_allclose(np.sort(s.eigenvalues)[::-1], [1.0, 0.0, 0.0], atol=1e-15)

    def test_identity(self):
        s = spectrum_of(np.eye(4))
        np.testing.assert_allclose(s.eigenvalues, [0.25] * 4, atol=1e-15)

    def test_two_by_two(self):
        s = spectrum_of(np.array([[1.0, 0.5], [0.5, 1.0]]))
        np.testing.assert_allclose(np.sort(s.eigenvalues), [0.25, 0.75], atol=1e-15)

    def test_clips_round_off(self):
        s = spectrum_of(np.ones((5, 5)))
        assert np.all(s.eigenvalues >= 0.0)
        assert abs(s.trace_residual) < 1e-8

    def test_rejects_non_psd(self):
        K = np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]])
        with pytest.raises(NotPSDError):
            spectrum_of(K)

    def test_rejects_non_unit_diagonal(self):
        with pytest.raises(UsageError):
            spectrum_of(2 * np.eye(3))

    def test_trace_one_random(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            X = unit_rows(rng, rng.integers(1, 40), rng.integers(1, 20))
            for spec in (RBF1, LIN):
                s = spectrum_of(gram_matrix(X, spec))
                assert abs(s.trace_residual) < 1e-8
                assert np.all(s.eigenvalues >= 0)


class TestVNE:
    def test_pure(self):
        assert vne(Spectrum(np.array([1.0, 0.0, 0.0]), 3)) == 0.0

    def test_uniform(self):
        assert vne(Spectrum(np.full(4, 0.25), 4)) == pytest.approx(math.log(4), abs=1e-15)
        assert vne(Spectrum(np.full(4, 0.25), 4)) == pytest.approx(1.386294, abs=1e-6)

    def test_two_level(self):
        expected = -0.75 * math.log(0.75) - 0.25 * math.log(0.25)
        assert vne(Spectrum(np.array([0.75, 0.25]), 2)) == pytest.approx(expected, abs=1e-15)
        assert expected == pytest.approx(0.562335, abs=1e-6)

    def test_of_samples_identical(self):
        assert vne_of_samples([eye(3, 0)] * 5, RBF1) == pytest.approx(0.0, abs=1e-12)

    def test_of_samples_orthogonal_linear(self):
        assert vne_of_samples([eye(4, i) for i in range(4)], LIN) == pytest.approx(math.log(4), abs=1e-12)

    def test_of_samples_kernel_half(self):
        # two unit vectors at 60 degrees have linear kernel value 0.5
        x = np.array([1.0, 0.0])
        y = np.array([0.5, math.sqrt(3) / 2])
        assert vne_of_samples([x, y], LIN) == pytest.approx(0.562335, abs=1e-6)

    def test_range(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            n = rng.integers(1, 30)
            X = unit_rows(rng, n, rng.integers(1, 10))
            h = vne_of_samples(X, RBF1)
            assert -1e-12 <= h <= math.log(n) + 1e-9


class TestSampleMatrix:
    def test_rejects_unequal_groups(self):
        with pytest.raises(UsageError):
            SampleMatrix([[eye(2, 0)], [eye(2, 0), eye(2, 1)]])

    def test_rejects_empty(self):
        with pytest.raises(UsageError):
            SampleMatrix([])

    def test_layout(self):
        Y = SampleMatrix([[eye(3, 0), eye(3, 1)], [eye(3, 2), eye(3, 0)]])
        assert (Y.n, Y.m, Y.d) == (2, 2, 3)
        np.testing.assert_array_equal(Y.flat[2], eye(3, 2))
        np.testing.assert_array_equal(Y.group(1), [eye(3, 2), eye(3, 0)])


class TestDecompose:
    e1, e2 = eye(2, 0), eye(2, 1)

    def test_orthogonal_blocks(self):
        r = decompose([[self.e1, self.e1], [self.e2, self.e2]], LIN)
        assert r.epistemic == pytest.approx(0.0, abs=1e-12)
        assert r.aleatoric == pytest.approx(LN2, abs=1e-12)
        assert r.total == pytest.approx(LN2, abs=1e-12)
        np.testing.assert_allclose(np.sort(r.outer_spectrum.eigenvalues), [0, 0, 0.5, 0.5], atol=1e-12)

    def test_shared_support(self):
        r = decompose([[self.e1, self.e2], [self.e1, self.e2]], LIN)
        assert r.epistemic == pytest.approx(LN2, abs=1e-12)
        assert r.aleatoric == pytest.approx(0.0, abs=1e-12)
        assert r.total == pytest.approx(LN2, abs=1e-12)

    def test_single_group_has_no_aleatoric(self):
        rng = np.random.default_rng(3)
        for spec in (RBF1, LIN):
            r = decompose([unit_rows(rng, 6, 4)], spec)
            assert r.aleatoric == 0.0
            assert r.total == r.epistemic

    def test_accepts_array(self):
        arr = np.stack([[self.e1, self.e1], [self.e2, self.e2]])
        assert decompose(arr, LIN).aleatoric == pytest.approx(LN2)

    def test_spectra_shapes(self):
        rng = np.random.default_rng(4)
        r = decompose(unit_rows(rng, 12, 5).reshape(3, 4, 5), RBF1)
        assert len(r.inner_spectra) == 3
        assert all(s.source_size == 4 for s in r.inner_spectra)
        assert r.outer_spectrum.source_size == 12

    def test_matches_high_precision_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            n, m, d = rng.integers(1, 4), rng.integers(1, 5), rng.integers(2, 6)
            groups = unit_rows(rng, n * m, d).reshape(n, m, d)
            for spec in (RBF1, KernelSpec.rbf(5.0), LIN):
                got = decompose(groups, spec).as_tuple()
                np.testing.assert_allclose(got, mp_decompose(groups, spec), atol=1e-10)

    def test_degenerate_all_identical(self):
        groups = np.tile(eye(5, 2), (3, 4, 1))
        for spec in (RBF1, LIN):
            r = decompose(groups, spec)
            np.testing.assert_allclose(r.as_tuple(), 0.0, atol=1e-9)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            n, m, d = rng.integers(1, 6), rng.integers(1, 6), rng.integers(2, 8)
            groups = unit_rows(rng, n * m, d).reshape(n, m, d)
            base = decompose(groups, RBF1).as_tuple()
            shuffled = groups[rng.permutation(n)]
            shuffled = np.stack([g[rng.permutation(m)] for g in shuffled])
            np.testing.assert_allclose(decompose(shuffled, RBF1).as_tuple(), base, atol=1e-10)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 10), st.integers(0, 2**32 - 1),
           st.sampled_from([RBF1, KernelSpec.rbf(100.0), LIN]))
    def test_identity_and_bounds(self, n, m, d, seed, spec):
        groups = unit_rows(np.random.default_rng(seed), n * m, d).reshape(n, m, d)
        r = decompose(groups, spec)
        assert abs(r.total - r.aleatoric - r.epistemic) < 1e-10
        assert abs(r.total - vne(r.outer_spectrum)) < 1e-10
        assert r.aleatoric >= -1e-9
        assert -1e-12 <= r.epistemic <= math.log(m) + 1e-9
        assert -1e-12 <= r.total <= math.log(n * m) + 1e-9


class TestMonotoneSanity:
    """Swapping a duplicated answer for an orthogonal one never lowers total."""

    @staticmethod
    def _cases(n, m, d):
        basis = [eye(d, i) for i in range(d)]
        for assignment in itertools.product(range(2), repeat=n * m):
            cells = list(assignment)
            for pos in range(n * m):
                if cells.count(cells[pos]) < 2:
                    continue
                fresh = next(k for k in range(d) if k not in cells)
                replaced = cells.copy()
                replaced[pos] = fresh
                yield (np.array([basis[c] for c in cells]).reshape(n, m, d),
                       np.array([basis[c] for c in replaced]).reshape(n, m, d))

    @pytest.mark.parametrize("n,m", [(2, 2), (2, 3)])
    def test_enumerated(self, n, m):
        spec = KernelSpec.rbf(1.0)
        checked = 0
        for before, after in self._cases(n, m, n * m + 1):
            t_before = decompose(before, spec).total
            t_after = decompose(after, spec).total
            assert t_after >= t_before - 1e-12
            assert t_before == pytest.approx(mp_decompose(before, spec)[0], abs=1e-10)
            assert t_after == pytest.approx(mp_decompose(after, spec)[0], abs=1e-10)
            checked += 1
        assert checked > 0


class TestCovarianceOracle:
    def test_orthonormal_pair(self):
        s = covariance_oracle([eye(2, 0), eye(2, 1)])
        np.testing.assert_allclose(s.eigenvalues, [0.5, 0.5], atol=1e-15)

    def test_copies(self):
        v = unit_rows(np.random.default_rng(0), 1, 4)[0]
        s = covariance_oracle([v] * 6)
        np.testing.assert_allclose(s.nonzero(), [1.0], atol=1e-12)

    def test_matches_gram_spectrum(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            X = unit_rows(rng, 3, 4)
            a = covariance_oracle(X).nonzero(1e-10)
            b = spectrum_of(gram_matrix(X, LIN)).nonzero(1e-10)
            assert a.shape == b.shape
            np.testing.assert_allclose(a, b, atol=1e-8)
