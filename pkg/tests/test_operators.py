import numpy as np
import pytest
import scipy.sparse as sp

from tbflip.lattice import HoppingKernel, nearest_neighbor, perturbation_constant
from tbflip.markov import character_vector, flip_generator_dense
from tbflip.spectral.basis import CharacterBasis, DimensionError, Truncation, estimate_dimension
from tbflip.spectral.operators import (build_B, build_dK, build_K, build_L, build_V, export_coo, hopping_vectors)

H2 = HoppingKernel({(1,): 1.0, (-1,): 1.0, (2,): 0.3 + 0.2j, (-2,): 0.3 - 0.2j})


@pytest.fixture(scope="module")
def basis():
    return CharacterBasis.truncated(1, Truncation(6, 2, 2))


def test_basis_elements_are_sorted_and_unique(basis):
    assert basis.elements[0] == ((0,), ())
    for x, A in basis:
        assert list(A) == sorted(set(A))
    assert len(set(basis.elements)) == len(basis)
    assert len(basis) <= estimate_dimension(1, Truncation(6, 2, 2))


def test_basis_enlargement_embeds(basis):
    for bigger in (Truncation(8, 2, 2), Truncation(6, 3, 2), Truncation(6, 2, 3)):
        big = CharacterBasis.truncated(1, bigger)
        assert all(el in big for el in basis)


def test_oversized_truncation_rejected():
    with pytest.raises(DimensionError, match="basis elements"):
        CharacterBasis.truncated(3, Truncation(40, 4, 4))


def test_character_orthonormality_on_dense_space():
    n = 4
    sets = [(), (0,), (2,), (0, 1), (1, 3), (0, 2, 3), (0, 1, 2, 3)]
    E = np.array([character_vector(n, A) for A in sets])
    np.testing.assert_allclose(E @ E.T / 2**n, np.eye(len(sets)), atol=1e-15)


def test_B_diagonal(basis):
    B = build_B(basis, 1.0).matrix
    assert B[basis.index(((3,), ())), basis.index(((3,), ()))] == 0
    assert B[basis.index(((3,), ((0,),))), basis.index(((3,), ((0,),)))] == 2
    assert B[basis.index(((3,), ((0,), (1,)))), basis.index(((3,), ((0,), (1,))))] == 4
    assert sp.triu(B, 1).nnz == 0 and sp.tril(B, -1).nnz == 0


def test_B_matches_dense_generator_on_characters():
    n = 2
    Bd = flip_generator_dense(n, 1.0)
    for A, expected in (((0,), 2.0), ((0, 1), 4.0)):
        e = character_vector(n, A)
        np.testing.assert_allclose(Bd @ e, expected * e)


def test_V_columns(basis):
    V = build_V(basis).matrix.toarray()
    for A in ((), ((1,),), ((-1,), (2,))):
        i = basis.index(((0,), A))
        if i is not None:
            assert not np.any(V[:, i])
    x = (3,)
    col = V[:, basis.index((x, ()))]
    expected = basis.unit((x, ((3,),))) - basis.unit((x, ((0,),)))
    np.testing.assert_array_equal(col, expected)


def test_V_squared_matches_spin_identity(basis):
    V = build_V(basis).matrix
    x = (2,)
    v = V @ (V @ basis.unit((x, ())))
    expected = 2 * basis.unit((x, ())) - 2 * basis.unit((x, ((0,), (2,))))
    np.testing.assert_allclose(v, expected)


@pytest.mark.parametrize("h", [nearest_neighbor(1), H2])
def test_kernel_column_of_L0_vanishes(basis, h):
    L0 = build_L(basis, [0.0], 0.9, 1.0, h).matrix
    assert np.abs(L0[:, basis.kernel_index].toarray()).max() == 0


def test_P0_K0_P0_vanishes(basis):
    K0 = build_K(basis, [0.0], H2).matrix.toarray()
    e = basis.sector_mask(empty=True)
    assert np.abs(K0[np.ix_(e, e)]).max() < 1e-15


@pytest.mark.parametrize("h", [nearest_neighbor(1), H2])
def test_hermitian_part_is_B(basis, h):
    for k in (0.0, 0.4, -1.3):
        L = build_L(basis, [k], 0.7, 1.3, h).matrix
        herm = (L + L.conj().T) / 2
        assert abs(herm - build_B(basis, 1.3).matrix).max() < 1e-15


def test_hermitian_part_is_B_on_periodic_window():
    b = CharacterBasis.periodic_full(1, 4)
    L = build_L(b, [np.pi / 2], 0.5, 1.0, H2).matrix
    assert abs((L + L.conj().T) / 2 - build_B(b, 1.0).matrix).max() < 1e-15


def test_real_part_of_form_nonnegative(basis):
    rng = np.random.default_rng(0)
    L = build_L(basis, [0.3], 1.0, 1.0, H2).matrix
    phi = rng.normal(size=(len(basis), 1000)) + 1j * rng.normal(size=(len(basis), 1000))
    forms = np.einsum("ij,ij->j", phi.conj(), L @ phi)
    assert forms.real.min() >= 0


def test_lambda_zero_empty_sector_block(basis):
    L = build_L(basis, [0.0], 0.0, 1.0, nearest_neighbor(1)).matrix.toarray()
    K = build_K(basis, [0.0], nearest_neighbor(1)).matrix.toarray()
    e = basis.sector_mask(empty=True)
    np.testing.assert_allclose(L[np.ix_(e, e)], 1j * K[np.ix_(e, e)])
    assert not np.any(np.diag(L)[e])


def test_perturbation_bound(basis):
    rng = np.random.default_rng(1)
    K0 = build_K(basis, [0.0], H2).matrix
    c = perturbation_constant(H2)
    for k in (1e-3, 0.1, 0.7):
        Kk = build_K(basis, [k], H2).matrix
        for _ in range(20):
            phi = rng.normal(size=len(basis)) + 1j * rng.normal(size=len(basis))
            assert np.linalg.norm((Kk - K0) @ phi) <= abs(k) * c * np.linalg.norm(phi) * (1 + 1e-12)


def test_dK_is_derivative(basis):
    k, eps = 0.37, 1e-6
    fd = (build_K(basis, [k + eps], H2).matrix - build_K(basis, [k - eps], H2).matrix) / (2 * eps)
    assert abs(fd - build_dK(basis, [k], H2, 0).matrix).max() < 1e-8


def test_hopping_vectors(basis):
    U = hopping_vectors(basis, H2)
    dK = build_dK(basis, [0.0], H2, 0).matrix
    np.testing.assert_allclose(U[:, 0], dK @ basis.unit(((0,), ())))
    assert U[basis.kernel_index, 0] == 0
    assert np.all(U[~basis.sector_mask(empty=True)] == 0)


def test_clipping_counted():
    b = CharacterBasis.truncated(1, Truncation(3, 0, 0))
    L = build_L(b, [0.0], 1.0, 1.0, nearest_neighbor(1))
    assert L.clipped > 0
    assert L.meta["clip_V"] > 0


def test_export_coo(tmp_path, basis):
    L = build_L(basis, [0.2], 1.0, 1.0, nearest_neighbor(1))
    path = tmp_path / "L.txt"
    export_coo(L, basis, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# operator L")
    data = [l for l in lines if not l.startswith("#")]
    assert len(data) == L.matrix.nnz
    r, c, re, im = data[0].split()
    assert L.matrix[int(r), int(c)] == complex(float(re), float(im))
