"""Discrete Helmholtz splitting, 2x2 block operators and their Schur maps.

The field space splits W-orthogonally into ``g0 = range(G)`` (discrete
gradients with homogeneous Dirichlet data) and its complement, the discrete
divergence-free fields.  Dense bases are built on small meshes; larger meshes
use an implicit splitting whose projector ``P0 = G L^{-1} G^T W`` is applied
through a cached Laplacian factorisation.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import HomoglabError, InvalidArgumentError, NotAdmissibleError
from .fem import _coefficient_operator, _laplacian_solver, assemble_stiffness, interpolate, solve_linear
from .coefficients import NonlocalOperator
from .mesh import DiscreteGradient, Mesh, write_atomic

DENSE_LIMIT = 4096
IDENTITY_TOL = 1e-10
SPLITTING_SCHEMA = "homoglab.splitting/1"


# orthonormalisation ----------------------------------------------------------

def cgs2(X: np.ndarray, w: np.ndarray | None = None, tol: float = 1e-10) -> np.ndarray:
    """Classical Gram-Schmidt with one reorthogonalisation pass, in the ``w`` inner product.

    Raises if a column is (numerically) dependent on its predecessors.
    """
    X = np.asarray(X, dtype=float)
    w = np.ones(X.shape[0]) if w is None else np.asarray(w, dtype=float)
    n, k = X.shape
    Q = np.zeros((n, k))
    for j in range(k):
        v = X[:, j].copy()
        norm0 = np.sqrt(v @ (w * v))
        for _ in range(2):
            v -= Q[:, :j] @ (Q[:, :j].T @ (w * v))
        nv = np.sqrt(v @ (w * v))
        if nv <= tol * max(norm0, 1e-300):
            raise HomoglabError(f"column {j} is linearly dependent; discrete gradient is rank deficient")
        Q[:, j] = v / nv
    return Q


# splittings --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class OrthogonalSplitting:
    """W-orthonormal bases ``B0`` (gradients) and ``B1`` (complement) of the field space.

    ``implicit`` splittings carry no bases; only :meth:`P0`/:meth:`P1` are
    available and they require a mesh.
    """

    B0: np.ndarray | None
    B1: np.ndarray | None
    weights: np.ndarray
    mesh: Mesh | None = None
    implicit: bool = False
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def dims(self) -> tuple:
        if self.implicit:
            n0 = self.mesh.n_interior
            return n0, self.size - n0
        return self.B0.shape[1], self.B1.shape[1]

    @classmethod
    def from_dims(cls, k0: int, k1: int) -> "OrthogonalSplitting":
        """Coordinate splitting of R^(k0+k1) with unit weights (for pure block algebra)."""
        eye = np.eye(k0 + k1)
        return cls(eye[:, :k0], eye[:, k0:], np.ones(k0 + k1))

    @classmethod
    def from_bases(cls, B0, B1, weights=None, mesh=None) -> "OrthogonalSplitting":
        B0, B1 = np.asarray(B0, dtype=float), np.asarray(B1, dtype=float)
        w = np.ones(B0.shape[0]) if weights is None else np.asarray(weights, dtype=float)
        s = cls(B0, B1, w, mesh)
        err = s.orthonormality_error()
        if err > 1e-10:
            raise InvalidArgumentError(f"bases are not W-orthonormal (error {err:.2e})")
        if B0.shape[1] + B1.shape[1] != B0.shape[0]:
            raise InvalidArgumentError("bases do not span the field space")
        return s

    def orthonormality_error(self) -> float:
        if self.implicit:
            return 0.0
        B = np.hstack([self.B0, self.B1])
        return float(np.abs(B.T @ (self.weights[:, None] * B) - np.eye(B.shape[1])).max())

    # coordinates and projectors
    def coords0(self, f):
        return self.B0.T @ (_wcol(self.weights, f))

    def coords1(self, f):
        return self.B1.T @ (_wcol(self.weights, f))

    def P0(self, f):
        f = np.asarray(f)
        if self.implicit:
            grad = DiscreteGradient.of(self.mesh)
            solve = _laplacian_solver(self.mesh)
            rhs = grad.matrix.T @ _wcol(self.weights, f)
            z = solve(rhs) if rhs.ndim == 1 else np.column_stack([solve(c) for c in rhs.T])
            return grad.matrix @ z
        return self.B0 @ self.coords0(f)

    def P1(self, f):
        return np.asarray(f) - self.P0(f)

    def projector_matrices(self):
        if self.implicit:
            raise InvalidArgumentError("implicit splitting has no dense projectors")
        W = self.weights
        P0 = self.B0 @ (self.B0.T * W[None, :])
        return P0, np.eye(self.size) - P0

    def to_csv(self, path=None) -> str:
        """Both bases as ``basis,column,row,value`` records (zeros skipped), after a schema row."""
        if self.implicit:
            raise InvalidArgumentError("implicit splitting has no bases to export")
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        buf.write(f"# schema: {SPLITTING_SCHEMA}; field_size={self.size}; dims={self.dims[0]},{self.dims[1]}\n")
        wr.writerow(["basis", "column", "row", "value"])
        for name, B in (("B0", self.B0), ("B1", self.B1)):
            r, c = np.nonzero(np.abs(B) > 0)
            for ri, ci in zip(r, c):
                wr.writerow([name, ci, ri, repr(float(B[ri, ci]))])
        text = buf.getvalue()
        if path is not None:
            write_atomic(path, text)
        return text


def _wcol(w, f):
    f = np.asarray(f)
    return w * f if f.ndim == 1 else w[:, None] * f


def build_splitting(mesh: Mesh, mode: str = "auto") -> OrthogonalSplitting:
    """Helmholtz splitting of the field space of ``mesh`` (cached per mesh and mode).

    ``mode`` is ``"dense"``, ``"implicit"`` or ``"auto"`` (dense up to
    ``DENSE_LIMIT`` field unknowns).
    """
    if mode == "auto":
        mode = "dense" if mesh.field_size <= DENSE_LIMIT else "implicit"
    if mode not in ("dense", "implicit"):
        raise InvalidArgumentError(f"unknown splitting mode {mode!r}")
    return mesh.cached(f"splitting-{mode}", lambda: _build(mesh, mode))


def _build(mesh, mode):
    w = mesh.field_weights
    if mode == "implicit":
        return OrthogonalSplitting(None, None, w, mesh, implicit=True)
    G = DiscreteGradient.of(mesh).matrix.toarray()
    B0 = cgs2(G, w)
    # complement: complete QR of W^{1/2} B0, mapped back
    sw = np.sqrt(w)
    Q, _ = np.linalg.qr(sw[:, None] * B0, mode="complete")
    B1 = Q[:, B0.shape[1]:] / sw[:, None]
    return OrthogonalSplitting(B0, B1, w, mesh)


# block operators ---------------------------------------------------------------

def _apply(op, X):
    if isinstance(op, NonlocalOperator):
        return op.matvec(X)
    if callable(op) and not hasattr(op, "shape"):
        return op(X)
    return op @ X


@dataclass(eq=False)
class BlockOperator:
    """Four blocks ``a_ij = B_i^T W A B_j`` of a field-space operator."""

    a00: np.ndarray
    a01: np.ndarray
    a10: np.ndarray
    a11: np.ndarray
    splitting: OrthogonalSplitting | None = None
    operator: object = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def blocks(self):
        return [[self.a00, self.a01], [self.a10, self.a11]]

    @property
    def dims(self) -> tuple:
        return self.a00.shape[0], self.a11.shape[0]

    def full(self) -> np.ndarray:
        """The operator in splitting coordinates."""
        return np.block(self.blocks)

    def a00_factor(self):
        if "a00" not in self._cache:
            self._cache["a00"] = sla.lu_factor(self.a00) if self.a00.size else None
        return self._cache["a00"]

    def solve00(self, X):
        if not self.a00.size:
            return np.zeros((0,) + np.shape(X)[1:])
        return sla.lu_solve(self.a00_factor(), X)

    def inverse(self) -> "BlockOperator":
        if "inv" not in self._cache:
            k0 = self.a00.shape[0]
            inv = np.linalg.inv(self.full())
            self._cache["inv"] = BlockOperator(inv[:k0, :k0], inv[:k0, k0:], inv[k0:, :k0], inv[k0:, k0:],
                                               self.splitting)
        return self._cache["inv"]

    def inverse_blocks(self):
        return self.inverse().blocks

    def reassemble(self) -> np.ndarray:
        """Field-space matrix ``sum_ij B_i a_ij B_j^T W``."""
        S = self.splitting
        W = S.weights
        B = np.hstack([S.B0, S.B1])
        return B @ self.full() @ (B.T * W[None, :])

    def reassembly_error(self, n_probe: int = 5, seed: int = 0) -> float:
        """Relative mismatch of the reassembled action against the stored operator."""
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((self.splitting.size, n_probe))
        ref = _apply(self.operator, X)
        return float(np.linalg.norm(self.reassemble() @ X - ref) / max(np.linalg.norm(ref), 1e-300))

    def __add__(self, other):
        return BlockOperator(*(x + y for x, y in zip(self._tuple(), other._tuple())), self.splitting)

    def scaled(self, lam: float) -> "BlockOperator":
        return BlockOperator(*(lam * x for x in self._tuple()), self.splitting)

    def _tuple(self):
        return self.a00, self.a01, self.a10, self.a11

    @classmethod
    def from_matrix(cls, M, k0: int, splitting=None) -> "BlockOperator":
        M = np.asarray(M)
        return cls(M[:k0, :k0], M[:k0, k0:], M[k0:, :k0], M[k0:, k0:], splitting)


def block_decompose(A, S: OrthogonalSplitting) -> BlockOperator:
    """Blocks of ``A`` (matrix, sparse matrix, nonlocal operator or local coefficient)."""
    if S.implicit:
        raise InvalidArgumentError("block_decompose needs a dense splitting; use FieldSchurMaps")
    if S.mesh is not None and not (isinstance(A, np.ndarray) or sp.issparse(A)):
        A = _coefficient_operator(S.mesh, A)
    shape = getattr(A, "shape", None)
    if shape is not None and tuple(shape) != (S.size, S.size):
        raise InvalidArgumentError(f"operator shape {shape} does not match field size {S.size}")
    W = S.weights[:, None]
    AB0, AB1 = _apply(A, S.B0), _apply(A, S.B1)
    blk = BlockOperator(S.B0.T @ (W * AB0), S.B0.T @ (W * AB1), S.B1.T @ (W * AB0), S.B1.T @ (W * AB1), S, A)
    if blk.a00.size:
        blk.a00_factor()
    return blk


# Schur maps ----------------------------------------------------------------------

@dataclass
class SchurMaps:
    """``s1 = a00^-1``, ``s2 = a10 a00^-1``, ``s3 = a00^-1 a01``, ``s4 = a11 - a10 a00^-1 a01``."""

    s1: np.ndarray
    s2: np.ndarray
    s3: np.ndarray
    s4: np.ndarray

    def as_tuple(self):
        return self.s1, self.s2, self.s3, self.s4


def _min_sym_eig(m):
    if not m.size:
        return float("inf")
    return float(np.linalg.eigvalsh(0.5 * (m + m.T.conj()))[0])


def schur_maps(A: BlockOperator, alpha: float | None = None) -> SchurMaps:
    lam = _min_sym_eig(A.a00)
    floor = 1e-12 if alpha is None else alpha - 1e-10
    if not lam >= floor:
        raise NotAdmissibleError(f"a00 is not coercive (min eig of Re a00 = {lam:.3e})")
    s1 = A.solve00(np.eye(A.a00.shape[0]))
    s3 = A.solve00(A.a01)
    s2 = A.a10 @ s1
    s4 = A.a11 - A.a10 @ s3
    return SchurMaps(s1, s2, s3, s4)


def from_schur_maps(maps: SchurMaps, splitting=None) -> BlockOperator:
    """Inverse of :func:`schur_maps`."""
    a00 = np.linalg.inv(maps.s1) if maps.s1.size else maps.s1
    return BlockOperator(a00, a00 @ maps.s3, maps.s2 @ a00, maps.s4 + maps.s2 @ a00 @ maps.s3, splitting)


@dataclass
class SchurIdentityReport:
    residuals: dict
    tolerance: float = IDENTITY_TOL

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values()) if self.residuals else 0.0

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tolerance


def _rel(lhs, rhs):
    if not np.size(rhs):
        return 0.0
    return float(np.linalg.norm(lhs - rhs) / max(1.0, np.linalg.norm(rhs)))


def schur_identity_suite(A: BlockOperator, tol: float = IDENTITY_TOL) -> SchurIdentityReport:
    """Residuals of the four identities linking blocks of ``b = A^{-1}`` to Schur maps of ``A``:

    ``b11^-1 = s4``, ``b01 b11^-1 = -s3``, ``b11^-1 b10 = -s2`` and
    ``b00 - b01 b11^-1 b10 = s1``.
    """
    s = schur_maps(A)
    B = A.inverse()
    lam = _min_sym_eig(B.a11)
    if not lam > 0:
        raise NotAdmissibleError(f"(A^-1)_11 is not coercive (min eig {lam:.3e})")
    b11inv = np.linalg.inv(B.a11) if B.a11.size else B.a11
    res = {
        "inv11": _rel(b11inv, s.s4),
        "upper": _rel(B.a01 @ b11inv, -s.s3),
        "lower": _rel(b11inv @ B.a10, -s.s2),
        "schur00": _rel(B.a00 - B.a01 @ b11inv @ B.a10, s.s1),
    }
    return SchurIdentityReport(res, tol)


def random_admissible(rng: np.random.Generator, k0: int, k1: int, alpha: float = 0.5,
                      skew: float = 1.0) -> BlockOperator:
    """Random ``A = alpha I + R R^T / n + skew S`` with ``S`` skew, so ``Re A >= alpha``."""
    n = k0 + k1
    R = rng.standard_normal((n, n))
    S = rng.standard_normal((n, n))
    A = alpha * np.eye(n) + R @ R.T / n + skew * (S - S.T) / np.sqrt(n)
    return BlockOperator.from_matrix(A, k0, OrthogonalSplitting.from_dims(k0, k1))


def schur_identity_batch(trials: int = 200, max_dim: int = 40, seed: int = 0,
                         tol: float = IDENTITY_TOL) -> SchurIdentityReport:
    """Worst residual of each identity over ``trials`` random admissible operators."""
    rng = np.random.default_rng(seed)
    worst = {}
    for _ in range(trials):
        n = int(rng.integers(2, max_dim + 1))
        k0 = int(rng.integers(1, n))
        rep = schur_identity_suite(random_admissible(rng, k0, n - k0), tol)
        for k, v in rep.residuals.items():
            worst[k] = max(worst.get(k, 0.0), v)
    return SchurIdentityReport(worst, tol)


# field-space Schur maps (matrix-free) ----------------------------------------------

class FieldSchurMaps:
    """Schur maps embedded in the field space, basis-free.

    With ``K = G^T W A G``: ``S1 = G K^-1 G^T W``, ``S2 = P1 A S1``,
    ``S3 = S1 A P1`` and ``S4 = P1 A P1 - P1 A S1 A P1``.
    """

    def __init__(self, mesh: Mesh, A):
        self.mesh = mesh
        self.op = _coefficient_operator(mesh, A)
        self.K = assemble_stiffness(mesh, A)
        self.splitting = build_splitting(mesh, "implicit")
        self._grad = DiscreteGradient.of(mesh)
        K = self.K
        if sp.issparse(K):
            self._solve = spla.factorized(sp.csc_matrix(K))
        elif isinstance(K, np.ndarray):
            lu = sla.lu_factor(K)
            self._solve = lambda b: sla.lu_solve(lu, b)
        else:
            self._solve = lambda b: solve_linear(K, b)

    def _A(self, X):
        return _apply(self.op, X)

    def s1(self, X):
        G, w = self._grad.matrix, self._grad.weights
        rhs = G.T @ _wcol(w, X)
        if rhs.ndim == 1:
            return G @ self._solve(rhs)
        return G @ np.column_stack([self._solve(c) for c in rhs.T])

    def s2(self, X):
        return self.splitting.P1(self._A(self.s1(X)))

    def s3(self, X):
        return self.s1(self._A(self.splitting.P1(X)))

    def s4(self, X):
        Y = self._A(self.splitting.P1(X))
        return self.splitting.P1(Y - self._A(self.s1(Y)))

    def apply_all(self, X):
        return self.s1(X), self.s2(X), self.s3(X), self.s4(X)


def schur_field_matrices(A: BlockOperator):
    """Dense field-space embeddings ``B_i s B_j^T W`` of the four Schur maps."""
    S = A.splitting
    W = S.weights[None, :]
    s = schur_maps(A)
    B0, B1 = S.B0, S.B1
    return (B0 @ s.s1 @ (B0.T * W), B1 @ s.s2 @ (B0.T * W),
            B0 @ s.s3 @ (B1.T * W), B1 @ s.s4 @ (B1.T * W))


# weak-operator distance ------------------------------------------------------------

def default_test_fields(mesh: Mesh, kmax: int = 2) -> np.ndarray:
    """Columns: W-normalised low-frequency discrete gradients and divergence-free fields."""
    from .homogenisation import sine_products, vector_tests
    cols = []
    G = DiscreteGradient.of(mesh).matrix
    scal = sine_products(mesh.dim, kmax)
    for fn in scal.values():
        cols.append(G @ interpolate(mesh, fn))
    split = build_splitting(mesh)
    x = mesh.barycenters
    vec = vector_tests(scal, mesh.dim) if mesh.dim > 1 else {"one": lambda x: np.ones(x.shape[:-1] + (1,))}
    for fn in vec.values():
        v = np.asarray(fn(x)).reshape(-1)
        p = split.P1(v)
        if np.sqrt(p @ (mesh.field_weights * p)) > 1e-8:
            cols.append(p)
    X = np.column_stack(cols)
    nrm = np.sqrt(np.einsum("ij,i,ij->j", X, mesh.field_weights, X))
    return X / nrm


def _pairings(maps, X, w):
    return [X.T @ (w[:, None] * Y) for Y in maps]


def nonlocal_h_distance(A, B, tests: np.ndarray | None = None, mesh: Mesh | None = None) -> float:
    """``max_i max_{phi, psi} |<phi, (s_i(A) - s_i(B)) psi>|`` over test fields.

    ``A`` and ``B`` are :class:`BlockOperator` objects sharing a dense
    splitting, or field-space coefficients/operators on ``mesh`` (matrix-free).
    """
    return max(schur_pairing_gaps(A, B, tests, mesh).values())


def schur_pairing_gaps(A, B, tests=None, mesh=None) -> dict:
    """Per-map maximal pairing gap, keyed ``s1`` to ``s4``."""
    if isinstance(A, BlockOperator) and isinstance(B, BlockOperator):
        if A.splitting is not B.splitting:
            raise InvalidArgumentError("block operators must share a splitting")
        S = A.splitting
        w = S.weights
        if tests is None:
            if S.mesh is None:
                tests = np.eye(S.size)
            else:
                tests = default_test_fields(S.mesh)
        mA = [M @ tests for M in schur_field_matrices(A)]
        mB = [M @ tests for M in schur_field_matrices(B)]
    else:
        if mesh is None:
            mesh = getattr(A, "mesh", None) or getattr(B, "mesh", None)
        if mesh is None:
            raise InvalidArgumentError("field-space operators need a mesh")
        w = mesh.field_weights
        if tests is None:
            tests = default_test_fields(mesh)
        mA = FieldSchurMaps(mesh, A).apply_all(tests)
        mB = FieldSchurMaps(mesh, B).apply_all(tests)
    pa, pb = _pairings(mA, tests, w), _pairings(mB, tests, w)
    return {f"s{i + 1}": float(np.abs(x - y).max()) for i, (x, y) in enumerate(zip(pa, pb))}


@dataclass
class ConsistencyReport:
    n_list: list
    h_errors: list
    nlh_distances: list
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.h_errors[-1] <= self.tolerance and self.nlh_distances[-1] <= self.tolerance


def locnonloc_consistency(a, n_list, mesh: Mesh, tolerance: float = 5e-2, cell_resolution: int = 256,
                          f=1.0, tests=None) -> ConsistencyReport:
    """Run the H-experiment and the Schur-map distance on the same local family."""
    from .coefficients import CoefficientField, oscillate
    from .homogenisation import h_convergence_experiment
    rep = h_convergence_experiment(a, n_list, f=f, mesh=mesh, policy=None, cell_resolution=cell_resolution)
    limit = CoefficientField.constant(rep.a_hom, a.dim)
    h_err = [max(s, fl) for s, fl in zip(rep.errors("solution_error"), rep.errors("flux_error"))]
    if tests is None:
        tests = default_test_fields(mesh)
    dist = [nonlocal_h_distance(oscillate(a, n), limit, tests, mesh) for n in rep.n_list]
    return ConsistencyReport(list(rep.n_list), h_err, dist, tolerance)
