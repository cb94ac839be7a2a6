import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from blockapg.numkit import (
    BlockPartition,
    ColMatrix,
    EstimationError,
    InvalidPartitionError,
    block_gram_norm,
    full_gram_norm,
    make_partition,
    read_matrix,
    read_vector,
    spectral_norm,
    write_matrix,
    write_vector,
)


@pytest.mark.parametrize("n, s, expected", [
    (10, 5, (0, 2, 4, 6, 8, 10)),
    (5, 5, (0, 1, 2, 3, 4, 5)),
    (7, 3, (0, 3, 5, 7)),
])
def test_make_partition_examples(n, s, expected):
    assert make_partition(n, s).boundaries == expected


def test_uneven_sizes_by_enumeration():
    # first n % s blocks are one longer than the rest
    for n in range(1, 30):
        for s in range(1, n + 1):
            sizes = make_partition(n, s).sizes()
            q, r = divmod(n, s)
            assert sizes == [q + 1] * r + [q] * (s - r)


@pytest.mark.parametrize("n, s", [(5, 0), (3, 4), (1, 2)])
def test_make_partition_rejects(n, s):
    with pytest.raises(InvalidPartitionError):
        make_partition(n, s)


def test_partition_validation():
    with pytest.raises(InvalidPartitionError):
        BlockPartition(4, (0, 2, 2, 4))
    with pytest.raises(InvalidPartitionError):
        BlockPartition(4, (0, 3))
    P = BlockPartition(6, (0, 1, 4, 6))
    assert P.s == 3
    assert P.block_of(0) == 0 and P.block_of(3) == 1 and P.block_of(5) == 2


@given(st.integers(1, 200), st.data())
def test_partition_invariants(n, data):
    s = data.draw(st.integers(1, n))
    P = make_partition(n, s)
    sizes = P.sizes()
    assert sum(sizes) == n
    assert max(sizes) - min(sizes) <= 1
    covered = np.concatenate([np.arange(n)[sl] for sl in P.slices()])
    assert np.array_equal(covered, np.arange(n))


def test_spectral_norm_trivial():
    assert spectral_norm(np.diag([3.0, 4.0]), 2) == pytest.approx(4.0, rel=1e-8)
    assert spectral_norm(np.eye(5), 5) == pytest.approx(1.0, rel=1e-12)
    assert spectral_norm(np.zeros((3, 3)), 3) == 0.0


def test_spectral_norm_vs_dense_eigensolver():
    rng = np.random.default_rng(1)
    M = rng.standard_normal((4, 4))
    G = M.T @ M
    expected = np.linalg.eigvalsh(G)[-1]
    assert spectral_norm(G, 4) == pytest.approx(expected, rel=1e-6)


def test_spectral_norm_start_in_null_space():
    # all-ones start vector is annihilated by this Gram matrix
    G = np.array([[1.0, -1.0], [-1.0, 1.0]])
    assert spectral_norm(G, 2) == pytest.approx(2.0, rel=1e-8)


def test_spectral_norm_reports_nonconvergence():
    G = np.diag([1.0, 0.999999])
    with pytest.raises(EstimationError) as info:
        spectral_norm(G, 2, tol=1e-15, max_iter=3)
    assert info.value.vector.shape == (2,)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(0, 10_000))
def test_rayleigh_lower_bound(dim, seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((dim + 2, dim))
    G = M.T @ M
    lam = spectral_norm(G, dim)
    for _ in range(5):
        v = rng.standard_normal(dim)
        assert lam >= (v @ G @ v) / (v @ v) * (1 - 1e-7)


def test_block_gram_norm_examples():
    A = ColMatrix(np.eye(4))
    P = make_partition(4, 2)
    assert [block_gram_norm(A, P, i) for i in range(2)] == pytest.approx([1.0, 1.0])
    B = ColMatrix(np.array([[1.0, 0.0], [0.0, 2.0]]))
    assert block_gram_norm(B, make_partition(2, 1), 0) == pytest.approx(4.0, rel=1e-8)
    Z = ColMatrix(np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]))
    assert block_gram_norm(Z, BlockPartition(3, (0, 1, 3)), 1) == 0.0


@pytest.mark.parametrize("sparse", [False, True])
def test_block_gram_norm_vs_dense(sparse):
    rng = np.random.default_rng(7)
    M = rng.standard_normal((20, 10))
    A = ColMatrix(sp.csc_matrix(M) if sparse else M)
    P = make_partition(10, 2)
    for i in range(2):
        Mi = M[:, P.slice(i)]
        expected = np.linalg.eigvalsh(Mi.T @ Mi)[-1]
        assert block_gram_norm(A, P, i) == pytest.approx(expected, rel=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 30), st.integers(0, 10_000), st.data())
def test_block_norm_interlacing(n, seed, data):
    s = data.draw(st.integers(1, n))
    rng = np.random.default_rng(seed)
    A = ColMatrix(rng.standard_normal((rng.integers(2, 15), n)))
    P = make_partition(n, s)
    full = full_gram_norm(A)
    for i in range(s):
        assert block_gram_norm(A, P, i) <= full * (1 + 1e-6)


def test_colmatrix_products_agree_dense_sparse(rng):
    M = rng.standard_normal((6, 5)) * (rng.random((6, 5)) < 0.5)
    dense, sparse = ColMatrix(M), ColMatrix(sp.csc_matrix(M))
    v, r = rng.standard_normal(5), rng.standard_normal(6)
    sl = slice(1, 4)
    for A in (dense, sparse):
        np.testing.assert_allclose(A.matvec(v), M @ v, atol=1e-14)
        np.testing.assert_allclose(A.rmatvec(r), M.T @ r, atol=1e-14)
        np.testing.assert_allclose(A.block_matvec(sl, v[sl]), M[:, sl] @ v[sl], atol=1e-14)
        np.testing.assert_allclose(A.block_rmatvec(sl, r), M[:, sl].T @ r, atol=1e-14)
        np.testing.assert_allclose(A.column_norms_sq(), (M * M).sum(0), atol=1e-14)
    assert sparse.is_sparse and not dense.is_sparse


def test_colmatrix_rejects_bad_input():
    with pytest.raises(ValueError):
        ColMatrix(np.array([[1.0, np.nan]]))
    with pytest.raises(ValueError):
        ColMatrix(np.zeros((0, 3)))
    A = ColMatrix(np.ones((2, 2)))
    with pytest.raises(ValueError):
        A.raw[0, 0] = 5.0


@pytest.mark.parametrize("sparse", [False, True])
def test_matrix_market_round_trip(tmp_path, rng, sparse):
    M = rng.standard_normal((5, 4)) * (rng.random((5, 4)) < 0.6)
    A = ColMatrix(sp.csc_matrix(M) if sparse else M)
    write_matrix(tmp_path / "a.mtx", A)
    header = (tmp_path / "a.mtx").read_text().splitlines()[0]
    kind = "coordinate" if sparse else "array"
    assert header == f"%%MatrixMarket matrix {kind} real general"
    B = read_matrix(tmp_path / "a.mtx")
    np.testing.assert_array_equal(B.toarray(), M)


def test_vector_round_trip(tmp_path, rng):
    v = rng.standard_normal(7)
    write_vector(tmp_path / "v.txt", v)
    assert len((tmp_path / "v.txt").read_text().splitlines()) == 7
    np.testing.assert_array_equal(read_vector(tmp_path / "v.txt"), v)
