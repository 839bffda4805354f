import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homoglab import presets
from homoglab.coefficients import CoefficientField, constant_kernel, convolution_operator, oscillate, sine_kernel
from homoglab.errors import InvalidArgumentError, NotAdmissibleError
from homoglab.fem import interpolate
from homoglab.helmholtz import (BlockOperator, FieldSchurMaps, OrthogonalSplitting, block_decompose,
                                build_splitting, cgs2, default_test_fields, from_schur_maps,
                                locnonloc_consistency, nonlocal_h_distance, random_admissible,
                                schur_field_matrices, schur_identity_batch, schur_identity_suite, schur_maps)
from homoglab.homogenisation import nonlocal_limit_operator
from homoglab.mesh import DiscreteGradient, build_interval_mesh, build_square_mesh


@pytest.fixture(scope="module")
def sq4():
    mesh = build_square_mesh(4)
    return mesh, build_splitting(mesh)


# splitting -----------------------------------------------------------------------

def test_1d_splitting_dims():
    mesh = build_interval_mesh(10)
    S = build_splitting(mesh)
    assert S.dims == (9, 1)          # interior vertices, elements minus interior vertices


def test_2d_m2_single_gradient_direction():
    mesh = build_square_mesh(2)
    S = build_splitting(mesh)
    assert S.dims[0] == 1 and sum(S.dims) == mesh.field_size


def test_splitting_invariants(sq4):
    mesh, S = sq4
    assert S.orthonormality_error() <= 1e-12
    P0, P1 = S.projector_matrices()
    W = np.diag(mesh.field_weights)
    assert np.abs(P0 @ P0 - P0).max() <= 1e-12
    assert np.abs(P0.T @ W - W @ P0).max() <= 1e-12
    assert np.abs(P0 + P1 - np.eye(S.size)).max() <= 1e-12
    G = DiscreteGradient.of(mesh).matrix
    u = np.random.default_rng(1).standard_normal((mesh.n_interior, 5))
    Gu = G @ u
    wn = lambda X: np.sqrt(np.sum(mesh.field_weights[:, None] * X ** 2, axis=0))
    assert np.max(wn(P1 @ Gu) / wn(Gu)) <= 1e-12
    # complement fields are discretely divergence free: G^T W B1 = 0
    assert np.abs(G.T @ (mesh.field_weights[:, None] * S.B1)).max() <= 1e-12


def test_splitting_is_cached(sq4):
    mesh, S = sq4
    assert build_splitting(mesh) is S


def test_implicit_projector_matches_dense(sq4):
    mesh, S = sq4
    Si = build_splitting(mesh, "implicit")
    f = np.random.default_rng(2).standard_normal(mesh.field_size)
    assert np.allclose(Si.P0(f), S.P0(f), atol=1e-12)
    assert Si.dims == S.dims


def test_cgs2_detects_dependence():
    X = np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]])
    with pytest.raises(Exception, match="dependent"):
        cgs2(X)


def test_splitting_csv(tmp_path, sq4):
    _, S = sq4
    path = tmp_path / "split.csv"
    text = S.to_csv(path)
    assert path.read_text() == text
    lines = text.splitlines()
    assert lines[0].startswith("# schema: homoglab.splitting/1")
    assert lines[1] == "basis,column,row,value"
    B0 = np.zeros_like(S.B0)
    B1 = np.zeros_like(S.B1)
    for rec in lines[2:]:
        name, c, r, v = rec.split(",")
        (B0 if name == "B0" else B1)[int(r), int(c)] = float(v)
    assert np.array_equal(B0, S.B0) and np.array_equal(B1, S.B1)


def test_from_bases_rejects_non_orthonormal():
    with pytest.raises(InvalidArgumentError):
        OrthogonalSplitting.from_bases(np.array([[2.0], [0.0]]), np.array([[0.0], [1.0]]))


# blocks ----------------------------------------------------------------------------

def test_identity_and_scaled_blocks(sq4):
    mesh, S = sq4
    k0, k1 = S.dims
    I = np.eye(S.size)
    b = block_decompose(I, S)
    assert np.allclose(b.a00, np.eye(k0), atol=1e-12) and np.allclose(b.a11, np.eye(k1), atol=1e-12)
    assert np.abs(b.a01).max() <= 1e-12 and np.abs(b.a10).max() <= 1e-12
    b3 = block_decompose(3.0 * I, S)
    for x, y in zip(b3._tuple(), b._tuple()):
        assert np.allclose(x, 3.0 * y, atol=1e-12)


def test_random_spd_blocks_against_projection_products(sq4):
    mesh, S = sq4
    rng = np.random.default_rng(3)
    R = rng.standard_normal((S.size, S.size))
    A = R @ R.T + np.eye(S.size)
    b = block_decompose(A, S)
    W = np.diag(mesh.field_weights)
    assert np.allclose(b.a01, S.B0.T @ W @ A @ S.B1, atol=1e-10)
    assert b.reassembly_error() <= 1e-10


def test_coefficient_blocks_reassemble(sq4):
    mesh, S = sq4
    a = presets.coefficient("laminate")
    b = block_decompose(a, S)
    assert b.reassembly_error() <= 1e-10


def test_a00_matches_direct_quadrature():
    mesh = build_square_mesh(6)
    S = build_splitting(mesh)
    a = CoefficientField(lambda y: 2 + np.sin(2 * np.pi * y[..., 0]) * np.cos(2 * np.pi * y[..., 1]), 2, True)
    b = block_decompose(a, S)
    G = DiscreteGradient.of(mesh).matrix
    w = mesh.field_weights
    rng = np.random.default_rng(4)
    phi, psi = rng.standard_normal((2, mesh.n_interior))
    Gphi, Gpsi = G @ phi, G @ psi
    cphi, cpsi = S.coords0(Gphi), S.coords0(Gpsi)
    via_blocks = cphi @ b.a00 @ cpsi
    aval = np.repeat(a(mesh.barycenters.reshape(-1, 2))[:, 0, 0], 2)   # scalar field on both components
    direct = np.sum(w * aval * Gphi * Gpsi)
    assert abs(via_blocks - direct) <= 1e-10 * max(1.0, abs(direct))


def test_block_decompose_shape_mismatch(sq4):
    _, S = sq4
    with pytest.raises(InvalidArgumentError):
        block_decompose(np.eye(3), S)


# Schur maps ---------------------------------------------------------------------------

def test_schur_maps_identity_and_block_diagonal():
    S = OrthogonalSplitting.from_dims(3, 2)
    m = schur_maps(BlockOperator.from_matrix(np.eye(5), 3, S))
    assert np.allclose(m.s1, np.eye(3)) and np.allclose(m.s4, np.eye(2))
    assert not m.s2.any() and not m.s3.any()
    p = np.array([[2.0, 1.0, 0], [0, 3.0, 0], [0, 0, 4.0]])
    q = np.array([[5.0, -1.0], [1.0, 6.0]])
    A = np.zeros((5, 5))
    A[:3, :3], A[3:, 3:] = p, q
    m = schur_maps(BlockOperator.from_matrix(A, 3, S))
    assert np.allclose(m.s1, np.linalg.inv(p)) and np.allclose(m.s4, q)
    assert np.abs(m.s2).max() == 0 and np.abs(m.s3).max() == 0


def test_schur_maps_not_coercive():
    A = np.diag([-1.0, 1.0])
    with pytest.raises(NotAdmissibleError):
        schur_maps(BlockOperator.from_matrix(A, 1, OrthogonalSplitting.from_dims(1, 1)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(2, 30))
def test_s4_is_inverse_of_inverse_block(seed, n):
    rng = np.random.default_rng(seed)
    k0 = int(rng.integers(1, n))
    A = random_admissible(rng, k0, n - k0)
    s4 = schur_maps(A).s4
    ref = np.linalg.inv(np.linalg.inv(A.full())[k0:, k0:])
    assert np.linalg.norm(s4 - ref) <= 1e-10 * max(1.0, np.linalg.norm(ref))


def test_identity_suite_trivial_cases():
    S = OrthogonalSplitting.from_dims(2, 3)
    assert schur_identity_suite(BlockOperator.from_matrix(np.eye(5), 2, S)).max_residual == 0.0
    d = np.diag([2.0, 3.0, 4.0, 5.0, 6.0])
    rep = schur_identity_suite(BlockOperator.from_matrix(d, 2, S))
    assert rep.max_residual <= 1e-15


def test_identity_batch():
    rep = schur_identity_batch(200, 40, seed=42)
    assert rep.passed and rep.max_residual <= 1e-10
    assert set(rep.residuals) == {"inv11", "upper", "lower", "schur00"}


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_schur_involution(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 25))
    k0 = int(rng.integers(1, n))
    A = random_admissible(rng, k0, n - k0)
    back = from_schur_maps(schur_maps(A))
    assert np.allclose(back.full(), A.full(), atol=1e-8)
    # the construction applied to A^{-1}: its Schur maps are block expressions of A
    B = A.inverse()
    sB = schur_maps(B)
    # s4 of the inverse is the inverse of the a11 Schur map of A's inverse block
    assert np.allclose(sB.s1, np.linalg.inv(B.a00))
    assert np.allclose(from_schur_maps(sB).full(), B.full(), atol=1e-8)


def test_field_schur_maps_match_dense(sq4):
    mesh, S = sq4
    a = presets.coefficient("laminate")
    dense = schur_field_matrices(block_decompose(a, S))
    X = np.random.default_rng(5).standard_normal((mesh.field_size, 3))
    free = FieldSchurMaps(mesh, a).apply_all(X)
    for D, F in zip(dense, free):
        assert np.allclose(D @ X, F, atol=1e-10)


# weak-operator distance ---------------------------------------------------------------

def test_nlh_distance_zero_and_scalar_continuity(sq4):
    mesh, S = sq4
    a = presets.coefficient("laminate")
    A = block_decompose(a, S)
    assert nonlocal_h_distance(A, A) == 0.0
    d = [nonlocal_h_distance(A.scaled(lam), A) for lam in (1.1, 1.01, 1.001)]
    assert d[0] > d[1] > d[2] > 0
    assert d[2] <= 2e-2 * d[0]


def test_nlh_distance_needs_shared_splitting(sq4):
    _, S = sq4
    other = build_splitting(build_square_mesh(4), "dense")
    A = block_decompose(np.eye(S.size), S)
    B = BlockOperator(A.a00, A.a01, A.a10, A.a11, OrthogonalSplitting(S.B0, S.B1, S.weights))
    with pytest.raises(InvalidArgumentError):
        nonlocal_h_distance(A, B)


def test_default_test_fields_are_normalised(sq4):
    mesh, _ = sq4
    X = default_test_fields(mesh)
    nrm = np.einsum("ij,i,ij->j", X, mesh.field_weights, X)
    assert np.allclose(nrm, 1.0)


def test_nonlocal_kernel_distance_decreases():
    mesh = build_interval_mesh(256)
    k = sine_kernel(0.4, 1)
    lim = nonlocal_limit_operator(k, mesh)
    d = [nonlocal_h_distance(convolution_operator(oscillate(k, n), mesh).with_affine(1.0, -1.0), lim, mesh=mesh)
         for n in (2, 4, 8)]
    assert d[0] > d[1] > d[2]


def test_nonlocal_constant_kernel_distance_is_zero():
    mesh = build_interval_mesh(64)
    k = constant_kernel(0.3, 1)
    lim = nonlocal_limit_operator(k, mesh)
    op = convolution_operator(oscillate(k, 4), mesh).with_affine(1.0, -1.0)
    assert nonlocal_h_distance(op, lim, mesh=mesh) <= 1e-12


def test_locnonloc_constant():
    mesh = build_interval_mesh(64)
    rep = locnonloc_consistency(CoefficientField.constant(2.0, 1), [1, 2], mesh)
    assert max(rep.h_errors) <= 1e-10 and max(rep.nlh_distances) <= 1e-10


def test_locnonloc_1d_harmonic():
    mesh = build_interval_mesh(2048)
    rep = locnonloc_consistency(presets.coefficient("sin-harmonic"), [8, 16, 32, 64], mesh, tolerance=1e-2)
    assert rep.passed
    assert np.all(np.diff(rep.nlh_distances) < 0)


def test_locnonloc_2d_laminate_coarse_mesh():
    rep = locnonloc_consistency(presets.coefficient("laminate"), [4, 8, 16], build_square_mesh(64), cell_resolution=64)
    assert rep.h_errors[-1] <= 5e-2 and rep.nlh_distances[-1] <= 5e-2
