import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blockstep.sparse import (BlockVector, CsrMatrix, ShapeError, SmallDense, axpy_block,
                              dot_columns, linear_combination, norm_columns,
                              read_matrix_market, spbop, spmv, stage_couple,
                              write_matrix_market)


def random_csr(n, m, density, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, m)) * (rng.random((n, m)) < density)
    return CsrMatrix.from_dense(a), a


def triple_loop(a, x):
    out = np.zeros(a.shape[0])
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            out[i] += a[i, j] * x[j]
    return out


def test_spmv_identity_and_scalar():
    assert np.array_equal(spmv(CsrMatrix.identity(3), np.array([1.0, 2.0, 3.0])), [1, 2, 3])
    assert np.array_equal(spmv(CsrMatrix.from_dense([[2.0]]), np.array([3.0])), [6.0])


def test_spmv_random_vs_dense():
    a, dense = random_csr(8, 8, 0.5, 1)
    x = np.random.default_rng(2).standard_normal(8)
    ref = triple_loop(dense, x)
    assert np.allclose(spmv(a, x), ref, rtol=1e-14, atol=1e-14 * np.abs(ref).max())


def test_spmv_shape_error():
    with pytest.raises(ShapeError):
        spmv(CsrMatrix.identity(3), np.ones(4))


def test_spbop_identity():
    x = BlockVector(np.arange(12.0).reshape(3, 4))
    assert np.array_equal(spbop(CsrMatrix.identity(3), x).array, x.array)


def test_spbop_k1_is_spmv_bitwise():
    a, _ = random_csr(20, 20, 0.3, 3)
    x = np.random.default_rng(4).standard_normal(20)
    assert np.array_equal(spbop(a, BlockVector(x[:, None])).array[:, 0], spmv(a, x))


def test_spbop_k8_columns_bitwise():
    a, _ = random_csr(16, 16, 0.4, 5)
    x = np.random.default_rng(6).standard_normal((16, 8))
    y = spbop(a, BlockVector(x)).array
    for c in range(8):
        assert np.array_equal(y[:, c], spmv(a, x[:, c]))


def test_spbop_shape_error():
    with pytest.raises(ShapeError):
        spbop(CsrMatrix.identity(3), BlockVector.zeros(4, 2))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 30), st.sampled_from([1, 2, 4, 8, 16]), st.integers(0, 10_000))
def test_spbop_column_equivalence_property(n, k, seed):
    a, _ = random_csr(n, n, 0.3, seed)
    x = np.random.default_rng(seed + 1).standard_normal((n, k))
    y = spbop(a, BlockVector(x)).array
    for c in range(k):
        assert np.array_equal(y[:, c], spmv(a, x[:, c]))


def test_stage_couple_examples():
    y = BlockVector(np.random.default_rng(0).standard_normal((5, 3)))
    assert np.array_equal(stage_couple(y, SmallDense.from_array(np.eye(3))).array, y.array)
    perm = stage_couple(BlockVector([[1.0, 2.0]]), SmallDense.from_array([[0.0, 1.0], [1.0, 0.0]]))
    assert np.array_equal(perm.array, [[2.0, 1.0]])
    c = np.random.default_rng(1).standard_normal((4, 3))
    ref = np.einsum("ij,kj->ik", y.array, c)
    assert np.allclose(stage_couple(y, SmallDense.from_array(c)).array, ref, rtol=1e-14)
    with pytest.raises(ShapeError):
        stage_couple(y, SmallDense.from_array(np.eye(2)))


def test_small_dense_column_major():
    s = SmallDense.from_array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(s.values, [1.0, 3.0, 2.0, 4.0])
    assert s[1, 0] == 3.0
    with pytest.raises(ShapeError):
        SmallDense(2, 2, np.zeros(3))


def test_block_vector_ops():
    rng = np.random.default_rng(7)
    x = BlockVector(rng.standard_normal((9, 4)))
    y = BlockVector(rng.standard_normal((9, 4)))
    assert np.array_equal(norm_columns(BlockVector.zeros(5, 3)), np.zeros(3))
    assert np.allclose(dot_columns(x, x), norm_columns(x) ** 2, rtol=1e-14)
    ref = [sum(x.array[i, c] * y.array[i, c] for i in range(9)) for c in range(4)]
    assert np.allclose(dot_columns(x, y), ref, rtol=1e-14)
    z = y.copy()
    axpy_block(2.0, x, z)
    assert np.allclose(z.array, y.array + 2.0 * x.array)
    with pytest.raises(ShapeError):
        dot_columns(x, BlockVector.zeros(9, 3))


def test_block_vector_layout_and_roundtrip():
    x = BlockVector.zeros(4, 3)
    for i in range(4):
        for c in range(3):
            x.set(i, c, 10 * i + c)
    for i in range(4):
        assert [x.offset(i, c) for c in range(3)] == [3 * i, 3 * i + 1, 3 * i + 2]
        for c in range(3):
            assert x.get(i, c) == 10 * i + c
    assert np.array_equal(x.data[3:6], [10.0, 11.0, 12.0])


def test_block_vector_dump_load(tmp_path):
    x = BlockVector(np.random.default_rng(8).standard_normal((7, 3)))
    x.dump(tmp_path / "x.bin")
    raw = (tmp_path / "x.bin").read_bytes()
    assert len(raw) == 16 + 7 * 3 * 8
    assert np.array_equal(BlockVector.load(tmp_path / "x.bin").array, x.array)


def test_csr_from_triplets_sums_duplicates():
    a = CsrMatrix.from_triplets(3, 3, [0, 2, 0, 1], [1, 2, 1, 0], [1.0, 5.0, 2.0, 4.0])
    ref = np.array([[0, 3.0, 0], [4.0, 0, 0], [0, 0, 5.0]])
    assert np.array_equal(a.to_dense(), ref)
    assert a.nnz == 3


def test_csr_invariants_rejected():
    with pytest.raises(ShapeError):
        CsrMatrix(2, 2, [0, 1, 1], [0, 1], [1.0, 1.0])
    with pytest.raises(ShapeError):
        CsrMatrix(2, 2, [0, 2, 2], [1, 0], [1.0, 1.0])
    with pytest.raises(ShapeError):
        CsrMatrix(1, 2, [0, 1], [2], [1.0])


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 10_000))
def test_csr_triplets_match_dense(n, m, seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(0, 3 * n * m))
    r, c, v = rng.integers(0, n, k), rng.integers(0, m, k), rng.standard_normal(k)
    dense = np.zeros((n, m))
    np.add.at(dense, (r, c), v)
    a = CsrMatrix.from_triplets(n, m, r, c, v)
    assert np.allclose(a.to_dense(), dense, rtol=1e-14, atol=1e-14)
    assert np.all(np.diff(a.row_offsets) >= 0)


def test_matrix_market_roundtrip(tmp_path):
    a, dense = random_csr(6, 5, 0.5, 9)
    write_matrix_market(tmp_path / "a.mtx", a)
    b = read_matrix_market(tmp_path / "a.mtx")
    assert np.array_equal(b.to_dense(), dense)


def test_linear_combination_union_pattern():
    a, da = random_csr(6, 6, 0.4, 10)
    b, db = random_csr(6, 6, 0.4, 11)
    assert np.allclose(linear_combination(2.0, a, -0.5, b).to_dense(), 2.0 * da - 0.5 * db)
