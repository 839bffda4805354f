import json

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from homoglab import presets
from homoglab.coefficients import CoefficientField, check_admissible
from homoglab.errors import InvalidArgumentError, NotCoerciveError
from homoglab.fem import (DiscreteField, assemble_stiffness, flux, interpolate, l2_pairing, load_vector,
                          solve_direct, solve_lax_milgram)
from homoglab.mesh import (DiscreteGradient, Mesh, build_interval_mesh, build_square_mesh, export_coo,
                           import_coo)


# meshes ---------------------------------------------------------------------------

def test_interval_mesh_counts():
    m = build_interval_mesh(2)
    assert m.n_elements == 2 and m.n_interior == 1
    assert np.allclose(m.vertices[~m.boundary, 0], [0.5])
    m4 = build_interval_mesh(4, 0.0, 2.0)
    assert np.allclose(m4.measures, 0.5)


@pytest.mark.parametrize("args", [(1,), (4, 1.0, 1.0), (4, 2.0, 1.0)])
def test_interval_mesh_rejects_bad_input(args):
    with pytest.raises(InvalidArgumentError):
        build_interval_mesh(*args)


@pytest.mark.parametrize("m,tri,interior", [(2, 8, 1), (3, 18, 4), (7, 98, 36)])
def test_square_mesh_counts(m, tri, interior):
    mesh = build_square_mesh(m)
    assert mesh.n_elements == tri and mesh.n_interior == interior
    assert abs(mesh.measures.sum() - 1.0) <= 1e-12
    assert np.all(mesh.measures > 0)


def test_square_mesh_rejects_m1():
    with pytest.raises(InvalidArgumentError):
        build_square_mesh(1)


def test_square_mesh_diagonal_convention():
    mesh = build_square_mesh(2)
    first = mesh.vertices[mesh.elements[0]]
    # lower triangle of the first cell uses the (0,0)-(h,h) diagonal
    assert {tuple(p) for p in first} == {(0.0, 0.0), (0.5, 0.0), (0.5, 0.5)}


def test_mesh_json_roundtrip():
    mesh = build_square_mesh(3)
    back = Mesh.from_json(mesh.to_json())
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.elements, mesh.elements)
    assert np.array_equal(back.boundary, mesh.boundary)
    assert set(json.loads(mesh.to_json())) >= {"vertices", "elements", "boundary"}


def test_gradient_is_injective():
    for mesh in (build_interval_mesh(9), build_square_mesh(5)):
        G = DiscreteGradient.of(mesh).matrix.toarray()
        assert np.linalg.svd(G, compute_uv=False).min() > 1e-8


# stiffness --------------------------------------------------------------------------

def test_stiffness_single_node():
    K = assemble_stiffness(build_interval_mesh(2), 1.0)
    assert np.allclose(np.asarray(sp.csr_matrix(K).todense()), [[4.0]])


def test_stiffness_1d_matches_finite_differences():
    m = 10
    K = sp.csr_matrix(assemble_stiffness(build_interval_mesh(m), 1.0)).toarray()
    ref = m * (2 * np.eye(m - 1) - np.eye(m - 1, k=1) - np.eye(m - 1, k=-1))
    assert np.allclose(K, ref, atol=1e-12)


def test_stiffness_linear_in_constant():
    mesh = build_square_mesh(4)
    K1 = sp.csr_matrix(assemble_stiffness(mesh, 1.0))
    K3 = sp.csr_matrix(assemble_stiffness(mesh, 3.0))
    assert abs(K3 - 3 * K1).max() <= 1e-12


def test_rotation_stiffness_equals_identity_stiffness():
    mesh = build_square_mesh(16)
    K_rot = sp.csr_matrix(assemble_stiffness(mesh, presets.coefficient("rotation")))
    K_id = sp.csr_matrix(assemble_stiffness(mesh, CoefficientField.constant(1.0, 2)))
    assert abs(K_rot - K_id).max() <= 1e-12


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(0.5, 3), st.floats(0.5, 3))
def test_constant_antisymmetric_part_is_invisible(skew, d1, d2):
    mesh = build_square_mesh(5)
    sym = np.diag([d1, d2])
    J = np.array([[0.0, -skew], [skew, 0.0]])
    K0 = sp.csr_matrix(assemble_stiffness(mesh, CoefficientField.constant(sym, 2)))
    K1 = sp.csr_matrix(assemble_stiffness(mesh, CoefficientField.constant(sym + J, 2)))
    assert abs(K1 - K0).max() <= 1e-12


def test_symmetric_coefficient_gives_spd_stiffness():
    mesh = build_square_mesh(6)
    a = presets.coefficient("laminate")
    K = sp.csr_matrix(assemble_stiffness(mesh, a)).toarray()
    assert np.abs(K - K.T).max() <= 1e-13
    assert np.linalg.eigvalsh(K).min() > 0


def test_coo_export_roundtrip():
    K = sp.csr_matrix(assemble_stiffness(build_square_mesh(4), 1.0))
    back = import_coo(export_coo(K), K.shape)
    assert abs(back - K).max() == 0


# Lax-Milgram solves ---------------------------------------------------------------

def test_poisson_1d_nodal_error():
    for m in (8, 16, 32):
        mesh = build_interval_mesh(m)
        u = solve_lax_milgram(mesh, 1.0, 1.0).u
        x = mesh.vertices[~mesh.boundary, 0]
        assert np.max(np.abs(u - x * (1 - x) / 2)) <= (1.0 / m) ** 2


def test_h_refinement_order_two_2d():
    exact = lambda x: np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])
    rhs = lambda x: 2 * np.pi ** 2 * exact(x)
    errs = []
    for m in (8, 16, 32):
        mesh = build_square_mesh(m)
        u = solve_lax_milgram(mesh, 1.0, rhs).u
        errs.append(np.max(np.abs(u - interpolate(mesh, exact))))
    assert errs[0] / errs[1] >= 3.5 and errs[1] / errs[2] >= 3.5


def test_homogeneity_in_coefficient():
    mesh = build_square_mesh(8)
    u1 = solve_lax_milgram(mesh, 1.0, 1.0).u
    u4 = solve_lax_milgram(mesh, 4.0, 1.0).u
    assert np.allclose(u4, u1 / 4, rtol=1e-12, atol=1e-15)


def _two_phase_exact(a1, a2):
    C = (1 / (8 * a1) + 3 / (8 * a2)) / (1 / (2 * a1) + 1 / (2 * a2))

    def u(x):
        left = (C * x - x ** 2 / 2) / a1
        mid = (C * 0.5 - 0.125) / a1
        right = mid + (C * (x - 0.5) - (x ** 2 - 0.25) / 2) / a2
        return np.where(x <= 0.5, left, right)

    return u, C


@pytest.mark.parametrize("a1,a2", [(1.0, 4.0), (3.0, 0.5)])
def test_two_phase_closed_form(a1, a2):
    mesh = build_interval_mesh(64)
    # aperiodic two-phase field on (0,1) itself, no oscillation
    a = CoefficientField(lambda y: np.where(y[..., 0] < 0.5, a1, a2), 1)
    sol = solve_lax_milgram(mesh, a, 1.0)
    u_exact, C = _two_phase_exact(a1, a2)
    x = mesh.vertices[~mesh.boundary, 0]
    assert np.max(np.abs(sol.u - u_exact(x))) <= 1e-10
    q = flux(mesh, a, sol.u).values
    xb = mesh.barycenters[:, 0]
    # the exact flux C - x is continuous through the interface; its element means match it
    assert np.max(np.abs(q - (C - xb))) <= 1e-8


def test_factorised_solve_matches_direct_and_residual():
    mesh = build_square_mesh(10)
    a = presets.coefficient("laminate")
    sol = solve_lax_milgram(mesh, a, lambda x: 1 + x[..., 0])
    assert sol.residual <= 1e-10
    ud = solve_direct(mesh, a, lambda x: 1 + x[..., 0])
    assert np.max(np.abs(sol.u - ud)) <= 1e-10 * np.max(np.abs(ud))


def test_nonsymmetric_solve_residual():
    mesh = build_square_mesh(8)
    a = CoefficientField(lambda y: np.array([[2.0, 0.7], [-0.4, 1.5]]) + 0 * y[..., :1, None], 2)
    sol = solve_lax_milgram(mesh, a, 1.0)
    assert sol.residual <= 1e-10


def test_not_coercive_raises():
    mesh = build_interval_mesh(8)
    with pytest.raises(NotCoerciveError) as info:
        solve_lax_milgram(mesh, -1.0, 1.0)
    assert info.value.eigenvalue is not None and info.value.eigenvalue < 0


def test_flux_of_linear_function_and_zero_coefficient():
    mesh = build_square_mesh(4)
    u = interpolate(mesh, lambda x: 0.0 * x[..., 0])
    assert np.allclose(flux(mesh, 1.0, u).values, 0.0)
    mesh1 = build_interval_mesh(5)
    x = mesh1.vertices[~mesh1.boundary, 0]
    # slope-3 function with nonzero boundary values is outside the space; use interior part only
    q = flux(mesh1, 0.0, 3 * x).values
    assert np.allclose(q, 0.0)


def test_flux_rejects_wrong_size():
    with pytest.raises(InvalidArgumentError):
        flux(build_interval_mesh(5), 1.0, np.zeros(7))


def test_load_and_pairing_of_constants():
    mesh = build_interval_mesh(16)
    assert abs(load_vector(mesh, 1.0).sum() - (1 - 1 / 16)) <= 1e-12
    u = np.ones(mesh.n_interior)
    # hat sum equals 1 except on the two boundary cells
    assert abs(l2_pairing(mesh, u, lambda x: np.ones_like(x)) - (1 - 1 / 16)) <= 1e-12


def test_discrete_field_size_check():
    with pytest.raises(InvalidArgumentError):
        DiscreteField(build_square_mesh(2), np.zeros(5))


def test_rotation_admissibility_depends_on_beta():
    a = presets.coefficient("rotation")
    assert check_admissible(a, 1.0, 2.0).admissible
    rep = check_admissible(a, 1.0, 1.0)
    assert not rep.admissible and rep.conditions["re_inv>=1/beta"] is False
