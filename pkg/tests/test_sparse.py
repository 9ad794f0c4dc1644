import numpy as np
import pytest

from beekit.errors import DataError, DimensionMismatch
from beekit.sparse import (CsrMatrix, InteractionMatrix, gather_columns,
                           normalize_rows, spmm, spmm_t, zero_columns)

from conftest import random_csr, random_dense01


class TestCsrConstruction:
    def test_from_dense_roundtrip(self, rng):
        dense = random_dense01(rng, 7, 11) * rng.random((7, 11))
        x = CsrMatrix.from_dense(dense)
        np.testing.assert_array_equal(x.to_dense(), dense)

    def test_columns_sorted_and_unique(self, rng):
        x, _ = random_csr(rng, 20, 30)
        for i in range(x.n_rows):
            cols, _ = x.row(i)
            assert np.all(np.diff(cols) > 0)

    def test_duplicate_pairs_rejected(self):
        with pytest.raises(DataError):
            CsrMatrix.from_coo([0, 0], [1, 1], [1.0, 1.0], (2, 3))

    def test_duplicate_sum_mode(self):
        x = CsrMatrix.from_coo([0, 0, 1], [1, 1, 0], [2.0, 3.0, 1.0], (2, 3),
                               dedup="sum")
        np.testing.assert_array_equal(x.to_dense(), [[0, 5, 0], [1, 0, 0]])

    def test_out_of_range_rejected(self):
        with pytest.raises(DataError):
            CsrMatrix.from_coo([0], [5], [1.0], (2, 3))

    def test_take_rows_matches_dense(self, rng):
        x, dense = random_csr(rng, 12, 8, values="random")
        sel = np.array([5, 0, 5, 11])
        np.testing.assert_array_equal(x.take_rows(sel).to_dense(), dense[sel])


class TestInteractionMatrix:
    def test_values_must_be_one(self):
        csr = CsrMatrix.from_coo([0], [0], [0.5], (1, 2))
        with pytest.raises(DataError):
            InteractionMatrix(csr, ["u"], ["a", "b"])

    def test_id_lengths_checked(self):
        csr = CsrMatrix.from_coo([0], [0], [1.0], (1, 2))
        with pytest.raises(DataError):
            InteractionMatrix(csr, ["u", "v"], ["a", "b"])
        with pytest.raises(DataError):
            InteractionMatrix(csr, ["u"], ["a", "a"])

    def test_from_pairs_dedup_keeps_earliest_timestamp(self):
        x = InteractionMatrix.from_pairs(
            [0, 0, 0], [1, 1, 0], 1, 2, timestamps=[50, 10, 99])
        assert x.nnz == 2
        # canonical order: (0,0) then (0,1); (0,1) keeps ts=10
        np.testing.assert_array_equal(x.timestamps, [99, 10])


class TestNormalizeRows:
    def test_triangle(self):
        np.testing.assert_allclose(normalize_rows(np.array([[3.0, 4.0]])),
                                   [[0.6, 0.8]], atol=1e-15)

    def test_zero_row_stays_zero(self):
        np.testing.assert_array_equal(normalize_rows(np.zeros((1, 2))),
                                      np.zeros((1, 2)))

    def test_random_rows_unit_norm(self, rng):
        m = rng.standard_normal((5, 3))
        norms = np.linalg.norm(normalize_rows(m), axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-12)

    def test_idempotent(self, rng):
        m = rng.standard_normal((6, 4)) * rng.random((6, 1)) * 100
        m[2] = 0.0
        once = normalize_rows(m)
        np.testing.assert_allclose(normalize_rows(once), once, atol=1e-12)

    def test_sparse_variant_matches_dense(self, rng):
        x, dense = random_csr(rng, 9, 7, values="random")
        np.testing.assert_allclose(normalize_rows(x).to_dense(),
                                   normalize_rows(dense), atol=1e-12)


class TestSpmm:
    def test_identity_pattern(self):
        x = CsrMatrix.from_dense(np.eye(2))
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(spmm(x, a), a)

    def test_empty_row_gives_zero(self):
        x = CsrMatrix.from_dense([[0.0, 0.0], [1.0, 0.0]])
        out = spmm(x, np.ones((2, 3)))
        np.testing.assert_array_equal(out[0], 0.0)

    def test_matches_dense_oracle(self, rng):
        for _ in range(20):
            x, dense = random_csr(rng, 10, 20, values="random")
            a = rng.standard_normal((20, 4))
            np.testing.assert_allclose(spmm(x, a), dense @ a, atol=1e-10)

    def test_dimension_mismatch(self, rng):
        x, _ = random_csr(rng, 3, 5)
        with pytest.raises(DimensionMismatch):
            spmm(x, np.ones((4, 2)))

    def test_large_random_agreement(self, rng):
        x, dense = random_csr(rng, 100, 100, density=0.1, values="random")
        a = rng.standard_normal((100, 8))
        np.testing.assert_allclose(spmm(x, a), dense @ a, atol=1e-10)

    def test_transpose_matches_dense_oracle(self, rng):
        for _ in range(10):
            x, dense = random_csr(rng, 10, 15, values="random")
            g = rng.standard_normal((10, 3))
            np.testing.assert_allclose(spmm_t(x, g), dense.T @ g, atol=1e-10)


class TestGatherColumns:
    def test_gather_all_in_order_is_identity(self, rng):
        x, dense = random_csr(rng, 6, 9)
        out = gather_columns(x, np.arange(9))
        np.testing.assert_array_equal(out.to_dense(), dense)

    def test_empty_column(self):
        x = CsrMatrix.from_dense([[1.0, 0.0], [1.0, 0.0]])
        out = gather_columns(x, [1])
        np.testing.assert_array_equal(out.to_dense(), [[0.0], [0.0]])

    def test_matches_dense_slice_oracle(self, rng):
        for _ in range(10):
            x, dense = random_csr(rng, 8, 12, values="random")
            items = rng.permutation(12)[:5]
            np.testing.assert_array_equal(gather_columns(x, items).to_dense(),
                                          dense[:, items])

    def test_permutation_roundtrip(self, rng):
        x, dense = random_csr(rng, 7, 10)
        perm = rng.permutation(10)
        gathered = gather_columns(x, perm)
        inverse = np.argsort(perm)
        back = gather_columns(gathered, inverse)
        np.testing.assert_array_equal(back.to_dense(), dense)

    def test_out_of_range_and_duplicates_rejected(self, rng):
        x, _ = random_csr(rng, 4, 6)
        with pytest.raises(DataError):
            gather_columns(x, [0, 6])
        with pytest.raises(DataError):
            gather_columns(x, [1, 1])

    def test_zero_columns(self, rng):
        x, dense = random_csr(rng, 5, 8)
        out = zero_columns(x, [2, 4])
        expect = dense.copy()
        expect[:, [2, 4]] = 0.0
        np.testing.assert_array_equal(out.to_dense(), expect)
        assert out.n_cols == 8
