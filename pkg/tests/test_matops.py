import numpy as np
import pytest

from cnnadapt import hadamard, kronecker, reshape_colmajor, row_slice, vec_rowmajor


class TestHadamard:
    def test_identity_mask(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        ones = np.ones((2, 2))
        np.testing.assert_array_equal(hadamard(a, ones), a)

    def test_annihilator(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(hadamard(a, np.zeros((2, 2))),
                                      np.zeros((2, 2)))

    def test_direct_definition(self):
        out = hadamard(np.array([[2.0, 3.0]]), np.array([[4.0, 5.0]]))
        np.testing.assert_array_equal(out, [[8.0, 15.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            hadamard(np.ones((2, 2)), np.ones((2, 3)))

    def test_commutative_associative(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a, b, c = rng.normal(size=(3, 4, 5))
            np.testing.assert_allclose(hadamard(a, b), hadamard(b, a))
            np.testing.assert_allclose(
                hadamard(hadamard(a, b), c), hadamard(a, hadamard(b, c))
            )


class TestKronecker:
    def test_identity_blocks(self):
        out = kronecker(np.eye(2), np.array([[1.0, 2.0]]))
        np.testing.assert_array_equal(
            out, [[1.0, 2.0, 0.0, 0.0], [0.0, 0.0, 1.0, 2.0]]
        )

    def test_scalar_one_identity(self):
        m = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(kronecker(np.array([[1.0]]), m), m)

    def test_scaling(self):
        out = kronecker(np.array([[2.0]]), np.eye(2))
        np.testing.assert_array_equal(out, [[2.0, 0.0], [0.0, 2.0]])

    def test_block_diagonal_action(self):
        # kron(I_k, b) applied to a stacked vector acts blockwise
        rng = np.random.default_rng(1)
        for k in range(1, 5):
            b = rng.normal(size=(3, 2))
            vecs = rng.normal(size=(k, 2))
            out = kronecker(np.eye(k), b) @ vecs.reshape(-1)
            expected = np.concatenate([b @ v for v in vecs])
            np.testing.assert_allclose(out, expected, atol=1e-12)


class TestVecReshape:
    def test_vec_rowmajor(self):
        np.testing.assert_array_equal(
            vec_rowmajor(np.array([[1.0, 2.0], [3.0, 4.0]])), [1, 2, 3, 4]
        )
        np.testing.assert_array_equal(
            vec_rowmajor(np.array([[5.0, 6.0, 7.0]])), [5, 6, 7]
        )
        np.testing.assert_array_equal(
            vec_rowmajor(np.array([[5.0], [6.0]])), [5, 6]
        )

    def test_reshape_colmajor(self):
        np.testing.assert_array_equal(
            reshape_colmajor(np.array([1.0, 2, 3, 4]), 2, 2), [[1, 3], [2, 4]]
        )
        np.testing.assert_array_equal(
            reshape_colmajor(np.array([1.0, 2, 3]), 3, 1), [[1], [2], [3]]
        )
        np.testing.assert_array_equal(
            reshape_colmajor(np.array([1.0, 2, 3, 4, 5, 6]), 2, 3),
            [[1, 3, 5], [2, 4, 6]],
        )

    def test_reshape_length_mismatch(self):
        with pytest.raises(ValueError):
            reshape_colmajor(np.arange(5.0), 2, 3)

    def test_composed_identity_needs_transpose(self):
        # the two conventions use opposite major orders: flattening the
        # transpose of a column-major reshape recovers the vector
        rng = np.random.default_rng(2)
        for n, m in [(2, 2), (3, 4), (1, 5), (6, 1)]:
            v = rng.normal(size=n * m)
            np.testing.assert_array_equal(
                vec_rowmajor(reshape_colmajor(v, n, m).T), v
            )


class TestRowSlice:
    def test_middle_rows(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        np.testing.assert_array_equal(row_slice(m, 2, 3), [[3, 4], [5, 6]])

    def test_full_slice_identity(self):
        m = np.arange(12.0).reshape(4, 3)
        np.testing.assert_array_equal(row_slice(m, 1, 4), m)

    def test_single_row(self):
        m = np.arange(12.0).reshape(4, 3)
        np.testing.assert_array_equal(row_slice(m, 3, 3), m[2:3])

    @pytest.mark.parametrize("i,j", [(0, 2), (2, 1), (1, 5), (-1, 2)])
    def test_out_of_range(self, i, j):
        with pytest.raises(IndexError):
            row_slice(np.ones((4, 3)), i, j)
