import math
import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.integrate import quad

from homoglab import presets
from homoglab.coefficients import CoefficientField
from homoglab.errors import IllPosedAtFrequencyError, InvalidArgumentError
from homoglab.evolutionary import (MaterialLaw, SkewOperator, TimeGrid, TransformAccuracyWarning,
                                   WeightedSignal, apply_time_derivative, apply_time_integral,
                                   causality_check, dynamic_convergence_experiment, energy_balance,
                                   fourier_laplace, gaussian_pulse, heat_model, implicit_euler,
                                   inverse_fourier_laplace, make_time_grid, maxwell1d_model,
                                   range_kernel_transform, embed_reduced, smooth_bump,
                                   solve_evolutionary, standard_tests, wave_model)
from homoglab.helmholtz import block_decompose, build_splitting, schur_field_matrices
from homoglab.mesh import build_interval_mesh, build_square_mesh

GRID = TimeGrid(-1.0, 21.0 / 2048, 2048)
PULSE = lambda t: np.exp(-(t - 5.0) ** 2)                  # noqa: E731


def _smooth_step(x):
    x = np.asarray(x, dtype=float)
    a = np.where(x > 0, np.exp(-1 / np.maximum(x, 1e-300)), 0.0)
    b = np.where(x < 1, np.exp(-1 / np.maximum(1 - x, 1e-300)), 0.0)
    return a / (a + b)


# transform layer --------------------------------------------------------------------

def test_zero_signal():
    f = WeightedSignal(GRID, np.zeros((GRID.count, 2)), 1.0)
    assert np.all(fourier_laplace(f).values == 0)


def test_plancherel_and_round_trip():
    f = WeightedSignal.from_function(GRID, PULSE, 1.0)
    F = fourier_laplace(f)
    assert abs(F.norm() / f.norm() - 1) <= 1e-6
    back = inverse_fourier_laplace(F)
    assert (back - f).norm() / f.norm() <= 1e-10


def test_transform_matches_quadrature_of_defining_integral():
    nu = 1.0
    f = WeightedSignal.from_function(GRID, PULSE, nu)
    F = fourier_laplace(f)
    idx = np.linspace(0, 60, 20).astype(int)
    for j in idx:
        xi = F.xi[j]
        re = quad(lambda t: math.cos(xi * t) * math.exp(-nu * t) * PULSE(t), -1, 20, limit=400, epsabs=1e-13)[0]
        im = quad(lambda t: -math.sin(xi * t) * math.exp(-nu * t) * PULSE(t), -1, 20, limit=400, epsabs=1e-13)[0]
        exact = (re + 1j * im) / math.sqrt(2 * math.pi)
        assert abs(F.values[j, 0] - exact) <= 1e-6 * max(1.0, abs(exact))


def test_derivative_of_gaussian():
    f = WeightedSignal.from_function(GRID, PULSE, 1.0)
    exact = WeightedSignal.from_function(GRID, lambda t: -2 * (t - 5) * PULSE(t), 1.0)
    assert (apply_time_derivative(f) - exact).norm() / exact.norm() <= 1e-3


def test_derivative_vanishes_on_a_long_plateau():
    grid = TimeGrid(0.0, 40 / 4096, 4096)
    f = WeightedSignal.from_function(grid, lambda t: _smooth_step((t - 1) / 4) * _smooth_step((39 - t) / 4), 0.1)
    d = apply_time_derivative(f)
    inner = (grid.times > 8) & (grid.times < 32)
    assert np.abs(d.values[inner]).max() <= 1e-8


def test_derivative_linearity_and_integral_inverse():
    f = WeightedSignal.from_function(GRID, PULSE, 1.0)
    g = WeightedSignal.from_function(GRID, lambda t: np.exp(-2 * (t - 7) ** 2), 1.0)
    lhs = apply_time_derivative(f + g)
    rhs = apply_time_derivative(f) + apply_time_derivative(g)
    assert (lhs - rhs).norm() <= 1e-12 * lhs.norm()
    back = apply_time_integral(apply_time_derivative(f))
    assert (back - f).norm() / f.norm() <= 1e-10


def test_edge_mass_warns():
    f = WeightedSignal.from_function(GRID, lambda t: np.ones_like(t), 0.01)
    with pytest.warns(TransformAccuracyWarning):
        fourier_laplace(f)


def test_signal_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    f = WeightedSignal(TimeGrid(0.0, 0.1, 16), rng.standard_normal((16, 3)), 0.7)
    path = tmp_path / "sig.csv"
    text = f.to_csv(path)
    assert path.read_text() == text
    assert text.splitlines()[0].startswith("# {") and '"nu": 0.7' in text.splitlines()[0]
    assert text.splitlines()[1] == "t,c0,c1,c2"
    g = WeightedSignal.from_csv(text)
    assert g.grid == f.grid and g.nu == f.nu and np.array_equal(g.values, f.values)
    c = WeightedSignal(TimeGrid(0.0, 0.1, 16), rng.standard_normal((16, 2)) * (1 + 1j), 0.7)
    assert np.array_equal(WeightedSignal.from_csv(c.to_csv()).values, c.values)


def test_signal_validation():
    with pytest.raises(InvalidArgumentError):
        WeightedSignal(GRID, np.zeros((3, 1)), 1.0)
    with pytest.raises(InvalidArgumentError):
        WeightedSignal(GRID, np.zeros((GRID.count, 1)), 0.0)
    with pytest.raises(InvalidArgumentError):
        make_time_grid(10.0, 4)


# model zoo --------------------------------------------------------------------------------

MESH = build_interval_mesh(16)


def _dense(M):
    return M.toarray() if sp.issparse(M) else np.asarray(M)


def test_heat_unit_coefficient_structure():
    m = heat_model(MESH, 1.0)
    nn, nf = MESH.n_interior, MESH.field_size
    assert np.array_equal(_dense(m.law.N0), np.diag(np.r_[np.ones(nn), np.zeros(nf)]))
    assert np.allclose(_dense(m.law.N1), np.diag(np.r_[np.zeros(nn), np.ones(nf)]))


def test_wave_and_maxwell_unit_structure():
    w = wave_model(MESH, 1.0)
    assert np.allclose(_dense(w.law.N0), np.eye(w.space.dim)) and not _dense(w.law.N1).any()
    mx = maxwell1d_model(MESH, 1.0, 1.0, 0.0)
    assert np.allclose(_dense(mx.law.N0), np.eye(mx.space.dim)) and not _dense(mx.law.N1).any()
    assert np.allclose(_dense(mx.A.matrix), _dense(w.A.matrix))


def test_maxwell_rejects_bad_parameters():
    with pytest.raises(InvalidArgumentError):
        maxwell1d_model(MESH, -1.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        maxwell1d_model(build_square_mesh(2), 1.0, 1.0)


@pytest.mark.parametrize("mesh", [build_interval_mesh(16), build_square_mesh(4)], ids=["1d", "2d"])
def test_skew_operator_and_bases(mesh):
    A = heat_model(mesh, 1.0).A
    assert A.skew_error() <= 1e-12
    Vr, Vk = A.range_kernel()
    V = np.hstack([Vr, Vk])
    assert np.abs(V.T @ V - np.eye(V.shape[1])).max() <= 1e-12
    assert np.abs(_dense(A.matrix) @ Vk).max(initial=0.0) <= 1e-12


def test_skew_operator_svd_fallback():
    Am = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    Vr, Vk = SkewOperator(Am).range_kernel()
    assert Vr.shape == (3, 2) and Vk.shape == (3, 1)


def test_well_posedness_certificate():
    a = presets.coefficient("sin-shift")
    wp = heat_model(build_interval_mesh(32), a).law.well_posedness(1.0)
    assert wp.holds
    assert 1 / 3 - 1e-12 <= wp.exact_min <= 1 / 3 + 1e-2        # min(nu, 1/max a)
    assert wp.sampled_min >= wp.exact_min - 1e-12


# solver -------------------------------------------------------------------------------------

def test_zero_source():
    m = heat_model(MESH, 1.0)
    F = WeightedSignal(make_time_grid(10.0, 64), np.zeros((64, m.space.dim)), 1.0)
    sol = solve_evolutionary(m.law, m.A, F)
    assert not sol.U.values.any()


def test_solver_residual_and_dimension_check():
    m = wave_model(MESH, presets.coefficient("sin-shift"))
    grid = make_time_grid(24.0, 512, 0.0, 1.0)
    F = WeightedSignal.from_function(grid, gaussian_pulse(1.0, 0.35), 1.0, np.ones(m.space.dim))
    assert solve_evolutionary(m.law, m.A, F).residual <= 1e-8
    with pytest.raises(InvalidArgumentError):
        solve_evolutionary(m.law, m.A, WeightedSignal(grid, np.zeros((512, 2)), 1.0))


def test_heat_matches_implicit_euler():
    mesh = build_interval_mesh(32)
    m = heat_model(mesh, 1.0)
    grid = make_time_grid(16.0, 1024, 0.0, 2.0)
    F = WeightedSignal.from_function(grid, smooth_bump(0.0, 2.0), 1.0,
                                     m.space.nodal_function(lambda x: np.sin(np.pi * x)))
    U = solve_evolutionary(m.law, m.A, F).U
    ref = implicit_euler(m.law, m.A, F, substeps=16)
    assert (U - ref).norm() / ref.norm() <= 1e-3


def test_ill_posed_symbol_raises():
    law = MaterialLaw(sp.csr_matrix((2, 2)), sp.csr_matrix((2, 2)))
    A = SkewOperator(sp.csr_matrix((2, 2)))
    F = WeightedSignal.from_function(make_time_grid(10.0, 64), gaussian_pulse(2.0), 1.0, np.ones(2))
    with pytest.raises(IllPosedAtFrequencyError):
        solve_evolutionary(law, A, F)


@pytest.mark.parametrize("builder", [lambda m: heat_model(m, presets.coefficient("sin-shift")),
                                     lambda m: wave_model(m, presets.coefficient("sin-shift")),
                                     lambda m: maxwell1d_model(m, 1.0, 2.0, 0.5)],
                         ids=["heat", "wave", "maxwell"])
def test_causality(builder):
    ratio, _ = causality_check(builder(build_interval_mesh(32)), nu=1.0, support=(1.0, 2.0))
    assert ratio <= 1e-4


def test_energy_balance_for_unit_material_law():
    m = wave_model(build_interval_mesh(32), 1.0)
    grid = make_time_grid(24.0, 1024, 0.0, 1.0)
    rng = np.random.default_rng(0)
    F = WeightedSignal.from_function(grid, gaussian_pulse(1.0, 0.3), 1.0, rng.standard_normal(m.space.dim))
    U = solve_evolutionary(m.law, m.A, F).U
    assert abs(energy_balance(U, m.A)) <= 1e-8
    assert 1.0 * U.norm() ** 2 <= np.real(U.inner(F)) * (1 + 1e-8)


def test_solution_operator_bound():
    a = presets.coefficient("sin-shift")
    mesh = build_interval_mesh(64)
    grid = make_time_grid(24.0, 512, 0.0, 1.0)
    for n in (1, 4):
        from homoglab.coefficients import oscillate
        m = heat_model(mesh, oscillate(a, n))
        c = m.law.well_posedness(1.0).constant
        F = WeightedSignal.from_function(grid, gaussian_pulse(1.0, 0.35), 1.0,
                                         np.random.default_rng(n).standard_normal(m.space.dim))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TransformAccuracyWarning)
            U = solve_evolutionary(m.law, m.A, F).U
        assert U.norm() <= F.norm() / c * (1 + 1e-8)


# range/kernel reduction ------------------------------------------------------------------

def _random_source(grid, dim, seed=0):
    return WeightedSignal.from_function(grid, gaussian_pulse(1.0, 0.5), 1.0,
                                        np.random.default_rng(seed).standard_normal(dim))


def test_trivial_kernel_reduction():
    rng = np.random.default_rng(1)
    S = rng.standard_normal((4, 4))
    A = SkewOperator(S - S.T)
    assert A.range_kernel()[1].shape[1] == 0
    law = MaterialLaw(np.eye(4), 0.5 * np.eye(4))
    F = _random_source(make_time_grid(12.0, 128, 0.0, 1.0), 4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TransformAccuracyWarning)
        direct = solve_evolutionary(law, A, F).U
        red = range_kernel_transform(law, A).solve(F)
    assert (red - direct).norm() <= 1e-8 * direct.norm()


def test_block_diagonal_reduction_decouples():
    mesh = build_interval_mesh(16)
    m = heat_model(mesh, 2.0)                  # constant a: M has no range/kernel coupling
    rs = range_kernel_transform(m.law, m.A)
    _, C_up, C_low, _ = rs.reduced(1.0 + 0.3j)
    assert np.abs(C_up).max() <= 1e-12 and np.abs(C_low).max() <= 1e-12
    F = _random_source(make_time_grid(12.0, 128, 0.0, 1.0), m.space.dim)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TransformAccuracyWarning)
        U = rs.solve(F)
        direct = solve_evolutionary(m.law, m.A, F).U
    Vk = rs.Vk
    # exact per frequency; the e^{nu t} reweighting scales roundoff by e^{nu T}
    Fk = F.values @ Vk
    assert np.abs(U.values @ Vk - 2.0 * Fk).max() <= 1e-9 * np.abs(Fk).max()
    assert (U - direct).norm() <= 1e-8 * direct.norm()


def test_2d_heat_reduction_matches_schur_maps():
    mesh = build_square_mesh(4)
    a = CoefficientField(lambda p: np.stack([np.stack([2 + np.sin(2 * np.pi * p[..., 0]), 0.3 + 0 * p[..., 0]], -1),
                                             np.stack([-0.3 + 0 * p[..., 0], 2 + np.cos(2 * np.pi * p[..., 1])], -1)], -2),
                         2, True)
    m = heat_model(mesh, a)
    rs = range_kernel_transform(m.law, m.A)
    F = _random_source(make_time_grid(12.0, 128, 0.0, 1.0), m.space.dim, 3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TransformAccuracyWarning)
        assert (rs.solve(F) - solve_evolutionary(m.law, m.A, F).U).norm() <= 1e-8 * F.norm()
    maps = schur_field_matrices(block_decompose(a, build_splitting(mesh)))
    sw = np.sqrt(mesh.field_weights)
    nn = mesh.n_interior
    for X, Y, sign in zip(embed_reduced(rs, 1.0 + 0.5j), (maps[0], maps[2], maps[1], maps[3]), (1, -1, -1, 1)):
        Yc = sign * (sw[:, None] * Y / sw[None, :])
        assert np.abs(X[nn:, nn:] - Yc).max() <= 1e-8 * np.abs(Yc).max()


# dynamic experiment -------------------------------------------------------------------------

def test_identical_models_give_floating_point_certificates():
    mesh = build_interval_mesh(32)
    lim = heat_model(mesh, 2.0)
    grid = make_time_grid(24.0, 512, 0.0, 1.0)
    F = WeightedSignal.from_function(grid, gaussian_pulse(1.0, 0.35), 1.0, lim.space.nodal_function(np.ones_like))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TransformAccuracyWarning)
        rep = dynamic_convergence_experiment({1: lim, 2: lim}, lim, F, standard_tests(lim.space, grid, 1.0), probes=4)
    assert rep.errors().max() <= 1e-12
    assert max(rep.series["norm_surrogate"]) <= 1e-12
    assert max(rep.series["solution_bound_ratio"]) <= 1.0
