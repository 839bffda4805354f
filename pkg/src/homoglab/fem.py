"""P1 assembly and the factorised Lax-Milgram solve ``u = C^{-1} (i* a i)^{-1} (C')^{-1} f``."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import CoefficientField, NonlocalOperator, block_diagonal
from .errors import InvalidArgumentError, NotCoerciveError
from .mesh import DiscreteGradient, Mesh

log = logging.getLogger(__name__)

COERCIVITY_TOL = 1e-10
DIRECT_LIMIT = 200_000


@dataclass(frozen=True, eq=False)
class DiscreteField:
    """Elementwise-constant vector field on a mesh (element-major coordinates)."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values).reshape(-1)
        if v.size != self.mesh.field_size:
            raise InvalidArgumentError(
                f"field has {v.size} coordinates, mesh needs {self.mesh.field_size}")
        object.__setattr__(self, "values", v)

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.mesh.n_elements, self.mesh.dim)

    def inner(self, other: "DiscreteField") -> float:
        if other.mesh is not self.mesh:
            raise InvalidArgumentError("fields live on different meshes")
        return np.vdot(self.values, self.mesh.field_weights * other.values)

    def norm(self) -> float:
        return math.sqrt(max(float(np.real(self.inner(self))), 0.0))


class SparsePlusLowRank(spla.LinearOperator):
    """``S + U V^T`` with sparse S; solved by the Woodbury identity."""

    def __init__(self, sparse, left, right, sparse_solve=None):
        self.sparse = sp.csc_matrix(sparse)
        self.left = left
        self.right = right
        dtype = np.result_type(self.sparse.dtype, left.dtype, right.dtype)
        super().__init__(dtype, self.sparse.shape)
        self._sparse_solve = sparse_solve
        self._lu = None

    def _matvec(self, x):
        return self.sparse @ x + self.left @ (self.right.T @ x)

    def _matmat(self, X):
        return self.sparse @ X + self.left @ (self.right.T @ X)

    def _rmatvec(self, x):
        return self.sparse.T @ x + self.right @ (self.left.T @ x)

    def toarray(self):
        return self.sparse.toarray() + self.left @ self.right.T

    def symmetric_part_dense(self):
        A = self.toarray()
        return 0.5 * (A + A.T)

    def solve(self, b):
        if self._lu is None:
            solve = self._sparse_solve or spla.factorized(self.sparse)
            SU = np.column_stack([solve(c) for c in np.asarray(self.left, dtype=float).T]) \
                if self.left.shape[1] else np.zeros((self.shape[0], 0))
            cap = np.eye(self.left.shape[1]) + self.right.T @ SU
            self._lu = (solve, SU, sla.lu_factor(cap) if cap.size else None)
        solve, SU, cap = self._lu
        y = solve(np.asarray(b, dtype=float))
        if cap is None:
            return y
        return y - SU @ sla.lu_solve(cap, self.right.T @ y)


def _laplacian_solver(mesh: Mesh):
    def build():
        return spla.factorized(DiscreteGradient.of(mesh).laplacian())
    return mesh.cached("laplacian_lu", build)


def _coefficient_operator(mesh: Mesh, a):
    """Normalise a coefficient into a field-space operator."""
    if isinstance(a, NonlocalOperator):
        if a.mesh is not mesh and a.mesh.key != mesh.key:
            raise InvalidArgumentError("nonlocal operator belongs to another mesh")
        return a
    if isinstance(a, CoefficientField):
        if a.dim != mesh.dim:
            raise InvalidArgumentError(f"coefficient is {a.dim}D but mesh is {mesh.dim}D")
        return a.field_operator(mesh)
    if np.isscalar(a) or (isinstance(a, np.ndarray) and a.shape in ((), (mesh.dim, mesh.dim))):
        return CoefficientField.constant(a, mesh.dim).field_operator(mesh)
    if sp.issparse(a) or isinstance(a, np.ndarray):
        if a.shape != (mesh.field_size, mesh.field_size):
            raise InvalidArgumentError(
                f"field operator has shape {a.shape}, expected {(mesh.field_size,) * 2}")
        return a
    raise InvalidArgumentError(f"unsupported coefficient type {type(a).__name__}")


def assemble_stiffness(mesh: Mesh, a, dof_map=None, n_dofs=None):
    """``K[psi, phi] = <a G phi, G psi>`` with barycentric one-point quadrature.

    Local coefficients give a sparse matrix; a dense :class:`NonlocalOperator`
    gives a dense array and a low-rank one a :class:`SparsePlusLowRank`.
    """
    if dof_map is None:
        G = DiscreteGradient.of(mesh).matrix
    else:
        G = mesh.gradient(dof_map, n_dofs)
    w = mesh.field_weights
    op = _coefficient_operator(mesh, a)
    if not isinstance(op, NonlocalOperator):
        if sp.issparse(op):
            return (G.T @ sp.diags(w) @ op @ G).tocsr()
        return G.T @ (w[:, None] * (op @ G.toarray()))
    d = mesh.dim
    we = mesh.measures
    lap = (G.T @ sp.diags(w) @ G).tocsc()
    comps = [G[c::d] for c in range(d)]
    if not op.low_rank:
        C = op.dense
        conv = sum(Gc.T @ (we[:, None] * (C @ Gc.toarray())) for Gc in comps)
        return op.shift * lap.toarray() + op.scale * conv
    left = np.hstack([Gc.T @ (we[:, None] * op.left) for Gc in comps])
    right = np.hstack([Gc.T @ op.right for Gc in comps])
    sparse_solve = None
    if dof_map is None and op.shift != 0:
        lap_solve, shift = _laplacian_solver(mesh), op.shift
        sparse_solve = lambda b: lap_solve(b) / shift  # noqa: E731
    return SparsePlusLowRank(op.shift * lap, op.scale * left, right, sparse_solve)


def apply_coefficient(mesh: Mesh, a, field_values: np.ndarray) -> np.ndarray:
    op = _coefficient_operator(mesh, a)
    if isinstance(op, NonlocalOperator):
        return op.matvec(field_values)
    return op @ field_values


# quadrature ------------------------------------------------------------------

_G1 = np.polynomial.legendre.leggauss(3)
_A4, _W4A = 0.445948490915965, 0.223381589678011
_B4, _W4B = 0.091576213509771, 0.109951743655322
_TRI_BARY = np.array([
    [1 - 2 * _A4, _A4, _A4], [_A4, 1 - 2 * _A4, _A4], [_A4, _A4, 1 - 2 * _A4],
    [1 - 2 * _B4, _B4, _B4], [_B4, 1 - 2 * _B4, _B4], [_B4, _B4, 1 - 2 * _B4],
])
_TRI_W = np.array([_W4A] * 3 + [_W4B] * 3)


def element_quadrature(mesh: Mesh):
    """Quadrature points (ne, q, dim), weights (ne, q), barycentric basis values (q, dim+1)."""
    if mesh.dim == 1:
        gx, gw = _G1
        bary = np.stack([(1 - gx) / 2, (1 + gx) / 2], axis=1)
        wts = 0.5 * gw
    else:
        bary, wts = _TRI_BARY, _TRI_W
    pts = np.einsum("qk,ekd->eqd", bary, mesh.vertices[mesh.elements])
    return pts, mesh.measures[:, None] * wts[None, :], bary


def _eval(fn, pts, dim):
    return np.asarray(fn(pts[..., 0] if dim == 1 else pts))


@dataclass(frozen=True)
class Functional:
    """A precomputed load vector on the interior nodal space."""

    vector: np.ndarray


def load_vector(mesh: Mesh, f) -> np.ndarray:
    """Interior load vector ``F_i = f(phi_i)``.

    ``f`` may be a callable, a constant, nodal values on all vertices, or a
    :class:`Functional`.
    """
    if isinstance(f, Functional):
        if f.vector.shape != (mesh.n_interior,):
            raise InvalidArgumentError("functional size does not match the interior space")
        return np.asarray(f.vector)
    if np.isscalar(f):
        c = f
        f = lambda x, c=c: np.full(np.shape(x)[:1] if mesh.dim > 1 else np.shape(x), c)
    pts, wts, bary = element_quadrature(mesh)
    if callable(f):
        fq = _eval(f, pts.reshape(-1, mesh.dim), mesh.dim).reshape(wts.shape)
    else:
        nodal = np.asarray(f)
        if nodal.shape != (mesh.n_vertices,):
            raise InvalidArgumentError("nodal load must have one value per vertex")
        fq = nodal[mesh.elements] @ bary.T
    local = np.einsum("eq,qk->ek", wts * fq, bary)
    full = np.zeros(mesh.n_vertices, dtype=local.dtype)
    np.add.at(full, mesh.elements.ravel(), local.ravel())
    return full[~mesh.boundary]


def nodal_full(mesh: Mesh, u_interior: np.ndarray) -> np.ndarray:
    if np.shape(u_interior)[0] != mesh.n_interior:
        raise InvalidArgumentError(
            f"nodal vector has {np.shape(u_interior)[0]} entries, mesh has {mesh.n_interior} interior vertices")
    full = np.zeros((mesh.n_vertices,) + np.shape(u_interior)[1:], dtype=np.asarray(u_interior).dtype)
    full[~mesh.boundary] = u_interior
    return full


def l2_pairing(mesh: Mesh, u_interior: np.ndarray, phi) -> float:
    """``<u_h, phi>_{L^2}`` for the P1 function with interior values ``u_interior``."""
    pts, wts, bary = element_quadrature(mesh)
    uq = nodal_full(mesh, u_interior)[mesh.elements] @ bary.T
    ph = _eval(phi, pts.reshape(-1, mesh.dim), mesh.dim).reshape(wts.shape)
    return float(np.sum(wts * uq * ph))


def field_pairing(mesh: Mesh, q: np.ndarray, psi) -> float:
    """``<q, psi>_{L^2}`` for an elementwise-constant field ``q``; ``psi`` vector valued."""
    if isinstance(q, DiscreteField):
        q = q.values
    pts, wts, _ = element_quadrature(mesh)
    vals = _eval(psi, pts.reshape(-1, mesh.dim), mesh.dim)
    vals = vals.reshape(wts.shape + (mesh.dim,))
    mean = np.einsum("eq,eqd->ed", wts, vals)
    return float(np.sum(np.asarray(q).reshape(mesh.n_elements, mesh.dim) * mean))


def interpolate(mesh: Mesh, fn) -> np.ndarray:
    """Interior nodal interpolant of ``fn``."""
    x = mesh.vertices[~mesh.boundary]
    return _eval(fn, x, mesh.dim)


# linear algebra --------------------------------------------------------------

def solve_linear(K, F, symmetric: bool | None = None, method: str = "auto", rtol: float = 1e-12):
    """Solve ``K u = F``: direct for desk-scale systems, Krylov otherwise."""
    if isinstance(K, SparsePlusLowRank):
        return K.solve(F)
    if isinstance(K, np.ndarray):
        return sla.solve(K, F)
    K = sp.csc_matrix(K)
    n = K.shape[0]
    if method == "auto":
        method = "direct" if n <= DIRECT_LIMIT else None
    if method is None:
        if symmetric is None:
            symmetric = abs(K - K.T).max() <= 1e-13 * abs(K).max()
        method = "cg" if symmetric else "gmres"
    if method == "direct":
        return spla.spsolve(K, F)
    diag = K.diagonal()
    M = spla.LinearOperator(K.shape, matvec=lambda x: x / diag)
    if method == "cg":
        u, info = spla.cg(K, F, rtol=rtol, atol=0.0, M=M, maxiter=20 * n)
    else:
        u, info = spla.gmres(K, F, rtol=rtol, atol=0.0, M=M, restart=200, maxiter=50 * n)
    if info != 0:
        log.warning("%s did not converge (info=%s); falling back to a direct solve", method, info)
        return spla.spsolve(K, F)
    return u


def coercivity_estimate(mesh: Mesh, a, K=None) -> float:
    """Lower estimate of ``inf Re<a p, p> / <p, p>`` over discrete gradients ``p``.

    Pointwise eigenvalue bounds are used when they certify coercivity;
    otherwise the smallest generalised eigenvalue of ``(sym K, G^T W G)``.
    """
    op = _coefficient_operator(mesh, a)
    if isinstance(a, CoefficientField) or (isinstance(a, (int, float, np.ndarray)) and not sp.issparse(a)
                                           and np.ndim(a) <= 2 and np.size(a) <= mesh.dim ** 2):
        field = a if isinstance(a, CoefficientField) else CoefficientField.constant(a, mesh.dim)
        vals = field.sample(mesh)
        herm = 0.5 * (vals + np.swapaxes(vals, -1, -2).conj())
        bound = float(np.linalg.eigvalsh(herm)[:, 0].min())
        if bound > COERCIVITY_TOL:
            return bound
    elif isinstance(op, NonlocalOperator):
        bound = op.shift - abs(op.scale) * op.young_bound
        if bound > COERCIVITY_TOL:
            return bound
    if K is None:
        K = assemble_stiffness(mesh, a)
    lap = DiscreteGradient.of(mesh).laplacian()
    n = lap.shape[0]
    if isinstance(K, SparsePlusLowRank):
        Kd = K.toarray() if n <= 4000 else None
    elif sp.issparse(K):
        Kd = K.toarray() if n <= 4000 else None
    else:
        Kd = K
    if Kd is not None:
        S = 0.5 * (Kd + Kd.T.conj())
        return float(sla.eigh(S, lap.toarray(), eigvals_only=True, subset_by_index=[0, 0])[0])
    Ksym = 0.5 * (K + K.T) if sp.issparse(K) else spla.LinearOperator(
        K.shape, matvec=lambda x: 0.5 * (K @ x + K.rmatvec(x)))
    lam = spla.eigsh(Ksym, k=1, M=lap, which="SA", return_eigenvectors=False, tol=1e-8)
    return float(lam[0])


@dataclass
class LaxMilgramSolution:
    u: np.ndarray                # interior nodal values
    lifted_load: np.ndarray      # q in discrete g0 with G^T W q = F
    flux_potential: np.ndarray   # p = (i* a i)^{-1} q = G u
    load: np.ndarray
    residual: float
    coercivity: float
    stiffness: object


def solve_lax_milgram(mesh: Mesh, a, f, check: bool = True, method: str = "auto") -> LaxMilgramSolution:
    """Dirichlet problem ``<a grad u, grad phi> = f(phi)`` in factorised form.

    The load is lifted to ``q = G L^{-1} F`` in the discrete gradient range,
    the compressed operator is inverted there (``p = G z`` with
    ``K z = G^T W q``), and ``u`` is pulled back through ``G`` by least squares.
    """
    grad = DiscreteGradient.of(mesh)
    G, w = grad.matrix, grad.weights
    F = load_vector(mesh, f)
    K = assemble_stiffness(mesh, a)
    coerc = coercivity_estimate(mesh, a, K) if check else float("nan")
    if check and not coerc > COERCIVITY_TOL:
        raise NotCoerciveError(f"compressed operator is not coercive (min eig {coerc:.3e})", coerc)
    lap_solve = _laplacian_solver(mesh)
    q = G @ lap_solve(F)
    z = solve_linear(K, G.T @ (w * q), method=method)
    p = G @ z
    u = lap_solve(G.T @ (w * p))
    r = K @ u - F
    nF = np.linalg.norm(F)
    res = float(np.linalg.norm(r) / nF) if nF > 0 else float(np.linalg.norm(r))
    return LaxMilgramSolution(u, q, p, F, res, coerc, K)


def solve_direct(mesh: Mesh, a, f) -> np.ndarray:
    """Plain ``K u = F`` solve, for consistency checks of the factorised path."""
    return solve_linear(assemble_stiffness(mesh, a), load_vector(mesh, f))


def flux(mesh: Mesh, a, u_h: np.ndarray) -> DiscreteField:
    """Elementwise ``a G u_h``."""
    u_h = np.asarray(u_h)
    if u_h.shape[0] != mesh.n_interior:
        raise InvalidArgumentError(
            f"solution has {u_h.shape[0]} entries, mesh has {mesh.n_interior} interior vertices")
    g = DiscreteGradient.of(mesh).matrix @ u_h
    return DiscreteField(mesh, apply_coefficient(mesh, a, g))


__all__ = [
    "DiscreteField", "Functional", "LaxMilgramSolution", "SparsePlusLowRank", "apply_coefficient",
    "assemble_stiffness", "block_diagonal", "coercivity_estimate", "element_quadrature",
    "field_pairing", "flux", "interpolate", "l2_pairing", "load_vector", "nodal_full",
    "solve_direct", "solve_lax_milgram", "solve_linear",
]
