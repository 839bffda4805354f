"""Cell problems, effective tensors and weak-convergence experiments.

The experiments solve the oscillatory problems for a list of indices ``n`` and
record pairings of ``u_n - u_hom`` (and of the fluxes) against a finite set of
smooth test functions, which is the computable stand-in for convergence of the
solution operators in the weak operator topology.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import (CoefficientField, Kernel, NonlocalOperator, _gauss_box, constant_kernel,
                           convolution_operator, mean_value, oscillate)
from .errors import InadmissibleKernelError, InvalidArgumentError, NotCoerciveError
from .fem import (DiscreteField, field_pairing, flux, l2_pairing, solve_lax_milgram)
from .mesh import Mesh, build_interval_mesh, build_square_mesh, periodic_dof_map

SCHEMA_VERSION = "homoglab.report/1"
NOISE_FLOOR = 1e-12


# cell problems ---------------------------------------------------------------

def cell_mesh(dim: int, m: int) -> Mesh:
    return build_interval_mesh(m) if dim == 1 else build_square_mesh(m)


def _cell_system(a: CoefficientField, m: int):
    mesh = cell_mesh(a.dim, m)
    dof = periodic_dof_map(mesh)
    n = int(dof.max()) + 1
    G = mesh.gradient(dof, n)
    w = mesh.field_weights
    vals = a.sample(mesh)
    herm = 0.5 * (vals + np.swapaxes(vals, -1, -2).conj())
    lam = float(np.linalg.eigvalsh(herm)[:, 0].min())
    if lam <= 1e-10:
        raise NotCoerciveError(f"cell coefficient not coercive (min eig {lam:.3e})", lam)
    A = a.field_operator(mesh)
    WA = sp.diags(w) @ A
    K = (G.T @ WA @ G).tocsc()
    lu = spla.splu(K[1:, 1:].tocsc())
    return mesh, dof, G, WA, K, lu


@dataclass
class Corrector:
    """Mean-zero periodic corrector for one coordinate direction."""

    values: np.ndarray       # periodic dof values
    direction: int
    mesh: Mesh
    dof_map: np.ndarray
    gradient: np.ndarray     # field-space G chi
    residual: float
    mean: float

    def nodal(self) -> np.ndarray:
        """Values at every vertex of the (unwrapped) cell mesh."""
        return self.values[self.dof_map]


def _solve_corrector(system, direction):
    mesh, dof, G, WA, K, lu = system
    d = mesh.dim
    E = np.zeros(mesh.field_size)
    E[direction::d] = 1.0
    b = -(G.T @ (WA @ E))
    chi = np.zeros(K.shape[0])
    chi[1:] = lu.solve(b[1:])
    # mean-zero projection, exact P1 integral over the cell
    cell_avg = chi[dof][mesh.elements].mean(axis=1) @ mesh.measures / mesh.measures.sum()
    chi -= cell_avg
    r = K @ chi - b
    nb = np.linalg.norm(b)
    res = float(np.linalg.norm(r) / nb) if nb > 1e-14 else float(np.linalg.norm(r))
    mean = float(chi[dof][mesh.elements].mean(axis=1) @ mesh.measures / mesh.measures.sum())
    return Corrector(chi, direction, mesh, dof, G @ chi, res, mean)


def solve_cell_problem(a: CoefficientField, m: int, direction: int) -> Corrector:
    """Periodic P1 corrector ``chi`` with ``div a (e_i + grad chi) = 0`` and zero mean.

    ``direction`` is zero-based (0 <= direction < dim).
    """
    if not a.periodic:
        raise InvalidArgumentError("cell problems need a periodic coefficient")
    if not 0 <= direction < a.dim:
        raise InvalidArgumentError(f"direction must lie in [0, {a.dim})")
    return _solve_corrector(_cell_system(a, m), direction)


@dataclass
class EffectiveTensor:
    matrix: np.ndarray
    resolution: int
    coefficient: str
    correctors: list = field(default_factory=list, repr=False)
    harmonic_discrepancy: float | None = None

    def symmetric_eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.T.conj()))


def effective_tensor(a: CoefficientField, m: int = 64) -> EffectiveTensor:
    """``a_hom[j, i] = int a (e_i + grad chi_i) . (e_j + grad chi_j)`` by one-point quadrature."""
    system = _cell_system(a, m)
    mesh, _, _, WA, _, _ = system
    d = mesh.dim
    corr = [_solve_corrector(system, i) for i in range(d)]
    cols = []
    for i in range(d):
        E = np.zeros(mesh.field_size)
        E[i::d] = 1.0
        cols.append(E + corr[i].gradient)
    X = np.stack(cols, axis=1)
    mat = X.T @ (WA @ X)
    mat = mat / mesh.measures.sum()
    disc = None
    if d == 1:
        hm = 1.0 / float(np.real(np.asarray(mean_value(a.inverse(), max(16, m)).value).reshape(-1)[0]))
        disc = abs(float(np.real(mat[0, 0])) - hm) / abs(hm)
    return EffectiveTensor(np.asarray(mat), m, a.name, corr, disc)


def harmonic_mean(a: CoefficientField, q: int = 4096) -> np.ndarray:
    """``M(a^{-1})^{-1}``, the 1D homogenised coefficient."""
    return np.linalg.inv(np.atleast_2d(mean_value(a.inverse(), q).value))


def arithmetic_mean(a: CoefficientField, q: int = 4096) -> np.ndarray:
    return np.atleast_2d(mean_value(a, q).value)


# test functions and mesh policy ---------------------------------------------

def sine_products(dim: int, kmax: int = 3) -> dict:
    """``prod_c sin(k_c pi x_c)`` for ``1 <= k_c <= kmax``."""
    tests = {}
    for ks in np.ndindex(*([kmax] * dim)):
        ks = tuple(k + 1 for k in ks)
        tid = "sin" + "x".join(map(str, ks))

        def fn(x, ks=ks):
            x = np.asarray(x)
            if dim == 1:
                return np.sin(ks[0] * np.pi * x)
            out = np.ones(x.shape[:-1])
            for c, k in enumerate(ks):
                out = out * np.sin(k * np.pi * x[..., c])
            return out

        tests[tid] = fn
    return tests


def vector_tests(scalar_tests: Mapping[str, Callable], dim: int) -> dict:
    """``phi e_c`` for each scalar test ``phi`` and component ``c``."""
    out = {}
    for tid, fn in scalar_tests.items():
        for c in range(dim):
            def vec(x, fn=fn, c=c):
                v = np.asarray(fn(x))
                res = np.zeros(v.shape + (dim,))
                res[..., c] = v
                return res
            out[f"{tid}e{c + 1}"] = vec
    return out


@dataclass(frozen=True)
class MeshPolicy:
    """Resolve oscillations with ``h <= 1 / (cells_per_period * n)``."""

    cells_per_period: int = 20
    min_cells: int = 16
    max_cells: int = 1 << 14

    def cells(self, n: int) -> int:
        return int(min(max(self.cells_per_period * n, self.min_cells), self.max_cells))

    def mesh_for(self, n: int, dim: int) -> Mesh:
        m = self.cells(n)
        return build_interval_mesh(m) if dim == 1 else build_square_mesh(m)

    def check(self, mesh: Mesh, n: int) -> None:
        h = mesh_size(mesh)
        if h > 1.0 / (self.cells_per_period * n) * (1 + 1e-12):
            raise InvalidArgumentError(
                f"mesh size {h:.3e} does not resolve n={n} (need h <= 1/({self.cells_per_period}n))")


def mesh_size(mesh: Mesh) -> float:
    ext = np.ptp(mesh.vertices[mesh.elements], axis=1)
    return float(ext.max())


def coefficient_gap(a_n: CoefficientField, a_lim, dim: int, n: int) -> float:
    """``||a_n - a_lim||_{L^2((0,1)^dim)}`` with pointwise Frobenius norms."""
    pts, wts = _gauss_box(((0.0, 1.0),) * dim, 8 * a_n.frequency, order=6 if dim == 1 else 4)
    diff = a_n(pts) - np.asarray(a_lim)
    return math.sqrt(float(wts @ np.sum(np.abs(diff) ** 2, axis=(-1, -2))))


# reports ---------------------------------------------------------------------

def loglog_slope(n_list, errors) -> float:
    n = np.asarray(n_list, dtype=float)
    e = np.asarray(errors, dtype=float)
    ok = e > 0
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(n[ok]), np.log(e[ok]), 1)[0])


@dataclass
class ConvergenceReport:
    """Per-index pairing errors with slope fits and verdicts.

    ``rows`` holds ``{n, test_id, solution_error, flux_error}`` dicts (NaN where a
    column does not apply); ``series`` holds named per-n scalar sequences.
    """

    kind: str
    n_list: list
    rows: list
    limit_model: str
    witness: str
    tolerances: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)
    scalars: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    sequence: bool = True
    criteria: dict = field(default_factory=dict)

    def errors(self, column: str = "solution_error", test_id: str | None = None) -> np.ndarray:
        """Max over tests (or the named test) of one error column, per n."""
        out = []
        for n in self.n_list:
            vals = [r[column] for r in self.rows if r["n"] == n and (test_id is None or r["test_id"] == test_id)]
            vals = [v for v in vals if not np.isnan(v)]
            out.append(max(vals) if vals else float("nan"))
        return np.asarray(out)

    def final_error(self, column: str = "solution_error", test_id: str | None = None) -> float:
        return float(self.errors(column, test_id)[-1])

    def slope(self, column: str = "solution_error", test_id: str | None = None) -> float:
        return loglog_slope(self.n_list, self.errors(column, test_id))

    @property
    def slopes(self) -> dict:
        out = {}
        for col in ("solution_error", "flux_error"):
            e = self.errors(col)
            if not np.all(np.isnan(e)):
                out[col] = loglog_slope(self.n_list, e)
        return out

    @property
    def verdicts(self) -> dict:
        out = {}
        for col, tol in self.tolerances.items():
            e = self._values(col)
            final = float(e[-1])
            s = loglog_slope(self.n_list, e)
            decays = bool(not self.sequence or np.all(e <= NOISE_FLOOR) or s < 0)
            out[col] = bool(final <= tol and decays)
        for name, spec in self.criteria.items():
            n = np.asarray(self.n_list)
            v = self._values(name)
            keep = n >= spec.get("from_n", n[0])
            n, v = n[keep], v[keep]
            if "min" in spec:
                out[f"{name}:min"] = bool(np.all(v >= spec["min"]))
            if "max" in spec:
                out[f"{name}:max"] = bool(np.all(v <= spec["max"]))
            if "slope" in spec:
                lo, hi = spec["slope"]
                s = loglog_slope(n, v)
                out[f"{name}:slope"] = bool(lo <= s <= hi)
            if "decreasing" in spec:
                slack = float(spec["decreasing"])
                out[f"{name}:decreasing"] = bool(np.all(v[1:] <= (1.0 + slack) * v[:-1]))
        return out

    def _values(self, name: str) -> np.ndarray:
        if name in ("solution_error", "flux_error"):
            return self.errors(name)
        return np.asarray(self.series[name], dtype=float)

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema: {SCHEMA_VERSION}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "test-id", "solution-error", "flux-error", "theorem"])
        for r in self.rows:
            w.writerow([r["n"], r["test_id"], _fmt(r["solution_error"]), _fmt(r["flux_error"]), self.witness])
        return buf.getvalue()

    def plot_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema: {SCHEMA_VERSION}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "error-name", "value"])
        for n, name, v in self.plot_rows():
            w.writerow([n, name, _fmt(v)])
        return buf.getvalue()

    def plot_rows(self):
        rows = []
        for col in ("solution_error", "flux_error"):
            e = self.errors(col)
            if not np.all(np.isnan(e)):
                rows.extend((n, col, float(v)) for n, v in zip(self.n_list, e))
        for name, vals in self.series.items():
            rows.extend((n, name, float(v)) for n, v in zip(self.n_list, vals))
        return rows

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "kind": self.kind,
            "witness": self.witness,
            "limit_model": self.limit_model,
            "n_list": list(map(int, self.n_list)),
            "rows": [{k: (_json_num(v) if k != "test_id" else v) for k, v in r.items()} for r in self.rows],
            "series": {k: [_json_num(x) for x in v] for k, v in self.series.items()},
            "scalars": {k: _json_num(v) for k, v in self.scalars.items()},
            "slopes": {k: _json_num(v) for k, v in self.slopes.items()},
            "tolerances": {k: _json_num(v) for k, v in self.tolerances.items()},
            "criteria": self.criteria,
            "verdicts": self.verdicts,
            "passed": self.passed,
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _fmt(v):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def _json_num(v):
    if isinstance(v, (bool, str)) or v is None:
        return v
    v = float(v)
    return None if math.isnan(v) else v


# experiments -------------------------------------------------------------------

def _resolve_kappa(kappa):
    if kappa is None:
        return lambda n: n
    if callable(kappa):
        return kappa
    stride, offset = kappa
    return lambda n: stride * n + offset


def _fixed_mesh(mesh, policy, n_list, dim):
    if mesh is None:
        mesh = (policy or MeshPolicy()).mesh_for(max(n_list), dim)
    if policy is not None:
        for n in n_list:
            policy.check(mesh, n)
    return mesh


def _check_n_list(n_list):
    n_list = [int(n) for n in n_list]
    if not n_list or any(b <= a for a, b in zip(n_list, n_list[1:])) or n_list[0] < 1:
        raise InvalidArgumentError("n_list must be a strictly increasing list of positive integers")
    return n_list


def default_cell_resolution(dim: int) -> int:
    """Cell mesh used for ``a_hom`` when none is given: 1024 cells in 1D, 64^2 in 2D."""
    return 1024 if dim == 1 else 64


def _static_experiment(kind, a, n_list, f, tests, vector_tests_, mesh, policy, cell_resolution,
                       tolerances, kappa, require_symmetric, witness):
    n_list = _check_n_list(n_list)
    if require_symmetric and not a.is_symmetric():
        raise InvalidArgumentError("G-convergence experiments need a symmetric coefficient")
    dim = a.dim
    mesh = _fixed_mesh(mesh, policy, [_resolve_kappa(kappa)(n) for n in n_list], dim)
    tests = tests if tests is not None else sine_products(dim)
    a_hom = effective_tensor(a, cell_resolution or default_cell_resolution(dim)).matrix
    a_hom = np.real_if_close(a_hom, tol=1e6)
    limit = CoefficientField.constant(a_hom, dim, name="a_hom")
    ref = solve_lax_milgram(mesh, limit, f)
    ref_pair = {t: l2_pairing(mesh, ref.u, fn) for t, fn in tests.items()}
    ref_flux = flux(mesh, limit, ref.u).values
    ref_fpair = {t: field_pairing(mesh, ref_flux, fn) for t, fn in (vector_tests_ or {}).items()}
    kap = _resolve_kappa(kappa)
    rows, gaps, residuals = [], [], []
    for n in n_list:
        a_n = oscillate(a, kap(n))
        sol = solve_lax_milgram(mesh, a_n, f)
        residuals.append(sol.residual)
        for t, fn in tests.items():
            rows.append({"n": n, "test_id": t,
                         "solution_error": abs(l2_pairing(mesh, sol.u, fn) - ref_pair[t]),
                         "flux_error": float("nan")})
        if vector_tests_:
            fl = flux(mesh, a_n, sol.u).values
            for t, fn in vector_tests_.items():
                rows.append({"n": n, "test_id": t, "solution_error": float("nan"),
                             "flux_error": abs(field_pairing(mesh, fl, fn) - ref_fpair[t])})
        gaps.append(coefficient_gap(a_n, a_hom, dim, kap(n)))
    scale = max(abs(v) for v in ref_pair.values()) if ref_pair else 1.0
    report = ConvergenceReport(
        kind, n_list, rows, limit_model=f"constant a_hom={np.round(a_hom, 10).tolist()}",
        witness=witness, tolerances=dict(tolerances or {}),
        series={"coefficient_gap": gaps, "residual": residuals},
        scalars={"reference_pairing_scale": scale, "min_coefficient_gap": min(gaps)},
        metadata={"coefficient": a.name, "mesh_cells": mesh.n_elements, "dim": dim,
                  "cell_resolution": cell_resolution or default_cell_resolution(dim)},
    )
    report.a_hom = a_hom
    return report


def g_convergence_experiment(a: CoefficientField, n_list, f=1.0, tests=None, mesh=None,
                             policy: MeshPolicy | None = MeshPolicy(), cell_resolution: int | None = None,
                             tolerances=None, kappa=None) -> ConvergenceReport:
    """Witness ``LM(a_n) -> LM(a_hom)`` weakly: pairings of ``u_n - u_hom``."""
    return _static_experiment("g-conv", a, n_list, f, tests, None, mesh, policy, cell_resolution,
                              tolerances, kappa, True, "g-convergence")


def h_convergence_experiment(a: CoefficientField, n_list, f=1.0, tests=None, vector_tests_=None,
                             mesh=None, policy: MeshPolicy | None = MeshPolicy(),
                             cell_resolution: int | None = None, tolerances=None, kappa=None) -> ConvergenceReport:
    """G-experiment plus flux pairings ``<a_n grad u_n - a_hom grad u_hom, psi>``."""
    tests = tests if tests is not None else sine_products(a.dim)
    if vector_tests_ is None:
        vector_tests_ = vector_tests(tests, a.dim)
    return _static_experiment("h-conv", a, n_list, f, tests, vector_tests_, mesh, policy,
                              cell_resolution, tolerances, kappa, False, "h-convergence")


def nonlocal_limit_operator(k: Kernel, mesh: Mesh, dense: bool | None = None):
    """``1 - M(k) chi_Om *`` on the field space."""
    mk = float(mean_value(k, 256).value)
    if abs(mk) <= 1e-14 and dense is not True:
        empty = np.zeros((mesh.n_elements, 0))
        return NonlocalOperator(mesh, left=empty, right=empty, shift=1.0, scale=-1.0,
                                kernel=constant_kernel(0.0, k.dim), young_bound=0.0,
                                l1_difference_set=0.0)
    return convolution_operator(constant_kernel(mk, k.dim), mesh, dense).with_affine(1.0, -1.0)


def nonlocal_homogenisation_experiment(k: Kernel, n_list, f=1.0, tests=None, mesh=None,
                                       policy: MeshPolicy | None = MeshPolicy(), tolerances=None,
                                       dense: bool | None = None) -> ConvergenceReport:
    """``-div (1 - k_n *) grad u_n = f`` against the limit ``1 - M(k) chi_Om *``."""
    n_list = _check_n_list(n_list)
    mesh = _fixed_mesh(mesh, policy, n_list, k.dim)
    tests = tests if tests is not None else sine_products(k.dim)
    lim_op = nonlocal_limit_operator(k, mesh, dense)
    ref = solve_lax_milgram(mesh, lim_op, f)
    ref_pair = {t: l2_pairing(mesh, ref.u, fn) for t, fn in tests.items()}
    rows, bounds, gaps, rel = [], [], [], []
    for n in n_list:
        conv = convolution_operator(oscillate(k, n), mesh, dense)
        bounds.append(conv.young_bound)
        if not conv.young_bound < 1.0:
            raise InadmissibleKernelError(
                f"Young bound {conv.young_bound:.3f} >= 1 at n={n}", conv.young_bound)
        op = conv.with_affine(1.0, -1.0)
        sol = solve_lax_milgram(mesh, op, f)
        errs = {}
        for t, fn in tests.items():
            errs[t] = abs(l2_pairing(mesh, sol.u, fn) - ref_pair[t])
            rows.append({"n": n, "test_id": t, "solution_error": errs[t], "flux_error": float("nan")})
        rel.append(max(errs[t] / abs(ref_pair[t]) for t in tests if abs(ref_pair[t]) > 1e-14))
        gaps.append(_operator_gap(conv, lim_op))
    return ConvergenceReport(
        "nonlocal", n_list, rows, limit_model="1 - M(k) chi_Omega *", witness="nonlocal-h-convergence",
        tolerances=dict(tolerances or {}),
        series={"young_bound": bounds, "relative_error": rel, "operator_gap": gaps},
        scalars={"max_young_bound": max(bounds), "mean_kernel": float(mean_value(k, 256).value)},
        metadata={"kernel": k.name, "mesh_cells": mesh.n_elements, "dim": k.dim},
    )


def _operator_gap(conv, lim_op, iters: int = 30) -> float:
    """Power-iteration norm of ``(1 - k_n*) - (1 - M(k) chi*)``; stays away from 0."""
    if conv.low_rank and lim_op.low_rank:
        left = np.hstack([conv.left, lim_op.left])
        right = np.hstack([conv.right, -lim_op.scale * lim_op.right])
        diff = NonlocalOperator(conv.mesh, left=left, right=right, young_bound=0.0)
    else:
        C = conv.conv_matrix() + lim_op.scale * lim_op.conv_matrix()
        diff = NonlocalOperator(conv.mesh, dense=C, young_bound=0.0)
    return diff.norm_estimate(iters)


@dataclass
class DivCurlPairing:
    values: np.ndarray
    target: float

    @property
    def errors(self) -> np.ndarray:
        return np.abs(self.values - self.target)


def divcurl_pairing_test(q_seq: Sequence, r_seq: Sequence, q, r) -> DivCurlPairing:
    """``<q_n, r_n>_{L^2}`` per n and the target ``<q, r>``."""
    fields = list(q_seq) + list(r_seq) + [q, r]
    meshes = {id(x.mesh) for x in fields}
    if len(meshes) != 1 and len({x.mesh.key for x in fields}) != 1:
        raise InvalidArgumentError("div-curl pairing needs all fields on a common mesh")
    if len(q_seq) != len(r_seq):
        raise InvalidArgumentError("q and r sequences differ in length")
    vals = np.array([float(np.real(qn.inner(rn))) if qn.mesh is rn.mesh else
                     float(np.real(np.vdot(qn.values, qn.mesh.field_weights * rn.values)))
                     for qn, rn in zip(q_seq, r_seq)])
    target = float(np.real(np.vdot(q.values, q.mesh.field_weights * r.values)))
    return DivCurlPairing(vals, target)


def divcurl_experiment(a: CoefficientField, n_list, f=1.0, mesh=None,
                       policy: MeshPolicy | None = MeshPolicy(), cell_resolution: int | None = None,
                       tolerances=None) -> ConvergenceReport:
    """``<a_n grad u_n, grad u_n> -> <a_hom grad u, grad u>``, plus an oscillating negative control."""
    n_list = _check_n_list(n_list)
    mesh = _fixed_mesh(mesh, policy, n_list, a.dim)
    a_hom = np.real_if_close(effective_tensor(a, cell_resolution or default_cell_resolution(a.dim)).matrix, tol=1e6)
    limit = CoefficientField.constant(a_hom, a.dim)
    ref = solve_lax_milgram(mesh, limit, f)
    r_lim = flux(mesh, 1.0, ref.u)
    q_lim = flux(mesh, limit, ref.u)
    q_seq, r_seq, ctrl_q = [], [], []
    x1 = mesh.barycenters[:, 0]
    for n in n_list:
        a_n = oscillate(a, n)
        sol = solve_lax_milgram(mesh, a_n, f)
        r_seq.append(flux(mesh, 1.0, sol.u))
        q_seq.append(flux(mesh, a_n, sol.u))
        osc = np.zeros((mesh.n_elements, mesh.dim))
        osc[:, 0] = np.sin(2 * np.pi * n * x1)
        ctrl_q.append(DiscreteField(mesh, osc))
    main = divcurl_pairing_test(q_seq, r_seq, q_lim, r_lim)
    ctrl = divcurl_pairing_test(ctrl_q, [r_lim] * len(n_list), DiscreteField(mesh, np.zeros(mesh.field_size)), r_lim)
    rows = [{"n": n, "test_id": "energy", "solution_error": float(e), "flux_error": float("nan")}
            for n, e in zip(n_list, main.errors)]
    rows += [{"n": n, "test_id": "oscillating-control", "solution_error": float(e), "flux_error": float("nan")}
             for n, e in zip(n_list, ctrl.errors)]
    return ConvergenceReport(
        "divcurl", n_list, rows, limit_model="<a_hom grad u, grad u>", witness="div-curl-lemma",
        tolerances=dict(tolerances or {}),
        series={"pairing": list(main.values)},
        scalars={"target": main.target}, metadata={"coefficient": a.name, "mesh_cells": mesh.n_elements},
    )
