"""Acceptance suite: one check per numbered criterion, each with its own oracle.

Each check returns a :class:`CriterionResult`.  ``homoglab verify`` runs them
all and ``tests/test_acceptance.py`` asserts them individually.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad

from . import presets
from .coefficients import CoefficientField
from .evolutionary import (TimeGrid, TransformAccuracyWarning, WeightedSignal, apply_time_derivative,
                           causality_check, dynamic_homogenisation_experiment, fourier_laplace,
                           gaussian_pulse, heat_model, inverse_fourier_laplace, make_time_grid,
                           maxwell1d_model, range_kernel_transform, embed_reduced,
                           solve_evolutionary, wave_model)
from .fem import assemble_stiffness
from .harness import splitting_residuals
from .helmholtz import block_decompose, build_splitting, schur_field_matrices, schur_identity_batch
from .homogenisation import (effective_tensor, g_convergence_experiment, h_convergence_experiment,
                             nonlocal_homogenisation_experiment, vector_tests)
from .mesh import build_interval_mesh, build_square_mesh


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float
    budget: float | None = None

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] criterion {self.number:>2}: {self.title} -- {self.detail} ({self.seconds:.1f}s)"


def _rel(x, ref):
    return abs(x - ref) / abs(ref)


def _sin_pi(x):
    return np.sin(np.pi * np.asarray(x))


# static criteria --------------------------------------------------------------------

def c1():
    a = presets.coefficient("sin-shift", {"c": 2.0})
    val = float(np.real(effective_tensor(a, 4096).matrix[0, 0]))
    # oracle: 1 / mean(1/a) by adaptive quadrature
    oracle = 1.0 / quad(lambda y: 1.0 / (2.0 + math.sin(2 * math.pi * y)), 0.0, 1.0, epsabs=1e-14)[0]
    err = max(_rel(val, math.sqrt(3.0)), _rel(val, oracle))
    return err <= 1e-6, f"a_hom={val:.12f}, rel. error vs sqrt(3) {err:.1e}"


def c2():
    a = presets.coefficient("laminate", {"c1": 2.0, "s1": 1.0, "c2": 2.0, "s2": 1.0})
    A = np.real(effective_tensor(a, 64).matrix)
    ref = np.diag([math.sqrt(3.0), 2.0])
    err = float(np.max(np.abs(A - ref) / np.diag(ref)[:, None]))
    return err <= 1e-3, f"a_hom diag=({A[0, 0]:.6f}, {A[1, 1]:.6f}), rel. error {err:.1e}"


_STATIC_N = [8, 16, 32, 64]


def c3():
    a = presets.coefficient("sin-harmonic", {"c": 2.0})
    rep = g_convergence_experiment(a, _STATIC_N, f=1.0, tests={"sin1": _sin_pi},
                                   mesh=build_interval_mesh(8192))
    lim = float(np.real(rep.a_hom[0, 0]))
    final = rep.final_error("solution_error")
    gaps = rep.series["coefficient_gap"]
    ok = final <= 1e-2 and min(gaps) >= 0.2 and abs(lim - 0.5) <= 1e-9
    return ok, f"limit {lim:.10f}, final pairing error {final:.2e}, min ||a_n - 1/2|| {min(gaps):.4f}"


def c4():
    a = presets.coefficient("sin-harmonic", {"c": 2.0})
    rep = h_convergence_experiment(a, _STATIC_N, f=1.0, tests={"sin1": _sin_pi},
                                   vector_tests_=vector_tests({"sin1": _sin_pi}, 1), mesh=build_interval_mesh(8192))
    final = rep.final_error("flux_error")
    s = rep.slope("flux_error")
    ok = final <= 1e-2 and -1.6 <= s <= -0.5
    return ok, f"final flux pairing error {final:.2e}, slope {s:.3f}"


def c5():
    mesh = build_square_mesh(16)
    K_rot = assemble_stiffness(mesh, presets.coefficient("rotation"))
    K_id = assemble_stiffness(mesh, CoefficientField.constant(1.0, 2))
    err = float(abs(K_rot - K_id).max())
    return err <= 1e-12, f"max entry difference {err:.1e}"


def c6():
    rep = schur_identity_batch(200, 40, seed=42)
    return rep.max_residual <= 1e-10, f"max residual {rep.max_residual:.1e} over 200 operators"


def c7():
    res = splitting_residuals(16, 50, seed=0)
    ok = res["idempotent"] <= 1e-12 and res["complement"] <= 1e-12 and res["gradient-annihilation"] <= 1e-12
    return ok, ", ".join(f"{k} {v:.1e}" for k, v in res.items())


def c8():
    k = presets.kernel("kernel-sin", {"amplitude": 0.4, "dim": 2})
    rep = nonlocal_homogenisation_experiment(k, [4, 8, 16, 32], 1.0, {"sin1x1": lambda x: _sin_pi(x[..., 0]) * _sin_pi(x[..., 1])})
    rel = rep.series["relative_error"][-1]
    yb = max(rep.series["young_bound"])
    return rel <= 5e-2 and yb < 1.0, (f"relative pairing error {rel:.1e} at n=32 on {rep.metadata['mesh_cells']} "
                                      f"cells, Young bound {yb:.4f}")


# transform and dynamic criteria -----------------------------------------------------

def c9():
    grid = TimeGrid(-1.0, 21.0 / 2048, 2048)
    g = lambda t: np.exp(-(t - 5.0) ** 2)
    f = WeightedSignal.from_function(grid, g, 1.0)
    F = fourier_laplace(f)
    planch = abs(F.norm() / f.norm() - 1.0)
    d = apply_time_derivative(f)
    exact = WeightedSignal.from_function(grid, lambda t: -2 * (t - 5.0) * g(t), 1.0)
    deriv = (d - exact).norm() / exact.norm()
    rt = (inverse_fourier_laplace(F) - f).norm() / f.norm()
    ok = planch <= 1e-6 and deriv <= 1e-3 and rt <= 1e-10
    return ok, f"Plancherel {planch:.1e}, derivative {deriv:.1e}, round trip {rt:.1e} (L2_nu)"


def c10():
    mesh = build_interval_mesh(64)
    out = {}
    for m in (heat_model(mesh, 1.0), wave_model(mesh, 1.0), maxwell1d_model(mesh, 1.0, 1.0, 0.5)):
        out[m.name], _ = causality_check(m, nu=1.0, support=(1.0, 2.0), guard=5)
    return max(out.values()) <= 1e-4, ", ".join(f"{k} {v:.1e}" for k, v in out.items())


_DYN = {}


def _dynamic(kind):
    if kind not in _DYN:
        a = presets.coefficient("sin-shift", {"c": 2.0})
        _DYN[kind] = dynamic_homogenisation_experiment(kind, a, [4, 8, 16, 32], build_interval_mesh(640))
    return _DYN[kind]


def _c11_one(kind):
    rep = _dynamic(kind)
    e = rep.errors("solution_error")
    tail = e[1:]                                        # n = 8, 16, 32
    ok = e[-1] <= 5e-2 and bool(np.all(np.diff(tail) < 0))
    return ok, f"{kind}: errors {np.array2string(e, precision=4)}"


def c11():
    ok_h, d_h = _c11_one("heat")
    ok_w, d_w = _c11_one("wave")
    return ok_h and ok_w, f"{d_h}; {d_w}"


def c12():
    mesh = build_square_mesh(16)
    a = CoefficientField(lambda p: np.stack([np.stack([2 + np.sin(2 * np.pi * p[..., 0]), 0.3 + 0 * p[..., 0]], -1),
                                             np.stack([-0.3 + 0 * p[..., 0], 2 + np.cos(2 * np.pi * p[..., 1])], -1)], -2),
                         2, True, name="skew-perturbed")
    m = heat_model(mesh, a)
    grid = make_time_grid(12.0, 128, 0.0, 1.0)
    rng = np.random.default_rng(0)
    F = WeightedSignal.from_function(grid, gaussian_pulse(1.0, 0.5), 1.0, rng.standard_normal(m.space.dim))
    rs = range_kernel_transform(m.law, m.A)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TransformAccuracyWarning)
        direct = solve_evolutionary(m.law, m.A, F).U
        reduced = rs.solve(F)
    sol_err = (reduced - direct).norm() / direct.norm()
    # reduced field blocks vs field-space Schur maps of a, in W^(1/2) coordinates
    S = build_splitting(mesh)
    maps = schur_field_matrices(block_decompose(a, S))
    sw = np.sqrt(mesh.field_weights)
    nn = mesh.n_interior
    blocks = embed_reduced(rs, 1.0 + 0.5j)
    worst = 0.0
    for X, Y, sign in zip(blocks, (maps[0], maps[2], maps[1], maps[3]), (1, -1, -1, 1)):
        Yc = sign * (sw[:, None] * Y / sw[None, :])
        worst = max(worst, float(np.abs(X[nn:, nn:] - Yc).max() / np.abs(Yc).max()))
    return sol_err <= 1e-8 and worst <= 1e-8, f"reduced vs direct {sol_err:.1e}, block mismatch {worst:.1e}"


def c13():
    parts, ok = [], True
    for kind in ("heat", "wave"):
        rep = _dynamic(kind)
        s = np.asarray(rep.series["norm_surrogate"])[1:]   # n = 8, 16, 32
        ok = ok and bool(np.all(s[1:] <= 1.1 * s[:-1]))
        parts.append(f"{kind}: " + ", ".join(f"{v:.2e}" for v in s))
    return ok, "; ".join(parts)


CRITERIA: list[tuple[int, str, Callable, float | None]] = [
    (1, "1D effective coefficient", c1, 5.0),
    (2, "2D laminate effective tensor", c2, 60.0),
    (3, "G-convergence witness", c3, 30.0),
    (4, "H-convergence flux witness", c4, None),
    (5, "non-symmetric degeneracy", c5, 5.0),
    (6, "Schur identity suite", c6, 10.0),
    (7, "splitting algebra", c7, 10.0),
    (8, "nonlocal homogenisation", c8, 300.0),
    (9, "transform layer", c9, None),
    (10, "causality", c10, None),
    (11, "dynamic homogenisation", c11, 360.0),
    (12, "range/kernel reduction", c12, None),
    (13, "norm-mode surrogate", c13, None),
]


def run_criterion(number: int) -> CriterionResult:
    num, title, fn, budget = CRITERIA[number - 1]
    t0 = time.perf_counter()
    ok, detail = fn()
    dt = time.perf_counter() - t0
    if budget is not None and dt > budget:
        ok, detail = False, detail + f"; over the {budget:g}s budget"
    return CriterionResult(num, title, bool(ok), detail, dt, budget)


def run_all(numbers=None, echo: Callable | None = print) -> list:
    results = []
    for num, *_ in CRITERIA:
        if numbers is not None and num not in numbers:
            continue
        r = run_criterion(num)
        if echo is not None:
            echo(r.line())
        results.append(r)
    return results
