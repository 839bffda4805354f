"""Local and nonlocal coefficients: oscillation, mean values, admissibility.

A :class:`CoefficientField` is a pointwise rule ``x -> a(x)`` returning ``N x N``
matrices; on a mesh it is sampled at element barycenters and becomes a
block-diagonal multiplication operator on the field space.  A
:class:`NonlocalOperator` acts on the same field space as
``shift * I + scale * (k *)`` where ``k *`` is midpoint-quadrature convolution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError
from .mesh import Mesh


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    if dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    return x


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Matrix-valued coefficient with optional unit-cell periodicity.

    ``rule`` maps points of shape ``(..., dim)`` to an array of shape
    ``(..., dim, dim)`` or to scalars ``(...)`` (read as multiples of the
    identity).  ``frequency`` implements the oscillation ``a(n x)``.
    """

    rule: Callable[[np.ndarray], np.ndarray]
    dim: int = 1
    periodic: bool = False
    alpha: float | None = None
    beta: float | None = None
    name: str = "coefficient"
    frequency: int = 1
    params: dict = field(default_factory=dict)

    def __call__(self, x) -> np.ndarray:
        x = _as_points(x, self.dim)
        val = np.asarray(self.rule(self.frequency * x))
        if val.shape == x.shape[:-1]:
            val = val[..., None, None] * np.eye(self.dim)
        elif val.shape[:-2] != x.shape[:-1]:
            val = np.broadcast_to(val, x.shape[:-1] + (self.dim, self.dim))
        return val

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self(np.zeros(self.dim)))

    def sample(self, mesh: Mesh) -> np.ndarray:
        """Values at element barycenters, shape (ne, dim, dim)."""
        if mesh.dim != self.dim:
            raise InvalidArgumentError(f"coefficient is {self.dim}D but mesh is {mesh.dim}D")
        return self(mesh.barycenters)

    def field_operator(self, mesh: Mesh) -> sp.csr_matrix:
        return block_diagonal(self.sample(mesh))

    def transpose(self) -> "CoefficientField":
        rule = lambda y, r=self.rule, d=self.dim: np.swapaxes(_full(r(y), y, d), -1, -2)
        return replace(self, rule=rule, name=self.name + "^T")

    def inverse(self) -> "CoefficientField":
        rule = lambda y, r=self.rule, d=self.dim: np.linalg.inv(_full(r(y), y, d))
        a, b = self.alpha, self.beta
        return replace(self, rule=rule, name=self.name + "^-1",
                       alpha=None if b is None else 1.0 / b, beta=None if a is None else 1.0 / a)

    def is_symmetric(self, resolution: int = 16) -> bool:
        vals = self(_cell_grid(self.dim, resolution))
        return bool(np.allclose(vals, np.swapaxes(vals, -1, -2).conj(), atol=1e-13))

    # constructors ---------------------------------------------------------
    @classmethod
    def constant(cls, value, dim: int = 1, **kw) -> "CoefficientField":
        value = np.asarray(value)
        mat = value * np.eye(dim) if value.ndim == 0 else value
        kw.setdefault("periodic", True)
        kw.setdefault("name", "constant")

        def rule(y, mat=mat):
            return np.broadcast_to(mat, y.shape[:-1] + mat.shape)

        return cls(rule, dim, **kw)


def _full(val, y, dim):
    val = np.asarray(val)
    if val.shape == y.shape[:-1]:
        return val[..., None, None] * np.eye(dim)
    return val


def block_diagonal(blocks: np.ndarray) -> sp.csr_matrix:
    """Block-diagonal sparse matrix from an array of (ne, N, N) blocks."""
    ne, n, _ = blocks.shape
    rows = np.repeat(np.arange(ne * n).reshape(ne, n), n, axis=1).reshape(ne, n, n)
    cols = np.tile(np.arange(ne * n).reshape(ne, 1, n), (1, n, 1))
    return sp.csr_matrix((blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(ne * n, ne * n))


def oscillate(a, n: int):
    """The oscillated coefficient ``x -> a(n x)`` (also works for kernels)."""
    if int(n) != n or n < 1:
        raise InvalidArgumentError("oscillation index must be a positive integer")
    if not a.periodic:
        raise InvalidArgumentError(f"{a.name!r} is not periodic; oscillation is undefined")
    return replace(a, frequency=a.frequency * int(n))


def _cell_grid(dim, q):
    s = (np.arange(q) + 0.5) / q
    grids = np.meshgrid(*([s] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


@dataclass(frozen=True)
class MeanValue:
    value: np.ndarray | float
    error: float
    resolution: int


def mean_value(a, q: int = 64) -> MeanValue:
    """Midpoint-rule mean over the unit cell, with a q-vs-2q error estimate."""
    if not a.periodic:
        raise InvalidArgumentError("mean value needs a periodic coefficient")
    if q < 16:
        raise InvalidArgumentError("mean value needs at least 16 points per axis")

    def quad(r):
        return np.asarray(a(_cell_grid(a.dim, r))).mean(axis=0)

    coarse, fine = quad(q), quad(2 * q)
    err = float(np.max(np.abs(coarse - fine)))
    if coarse.ndim == 0:
        coarse = float(coarse)
    return MeanValue(coarse, err, q)


# admissibility ------------------------------------------------------------

@dataclass
class AdmissibilityReport:
    admissible: bool
    conditions: dict
    worst: dict
    location: object = None
    message: str = ""

    def __bool__(self):
        return self.admissible


def _sym_min_eig(mats):
    herm = 0.5 * (mats + np.swapaxes(mats, -1, -2).conj())
    return np.linalg.eigvalsh(herm)[..., 0]


def check_admissible(a, alpha: float, beta: float, resolution: int = 64, box=None,
                     tol: float = 1e-10) -> AdmissibilityReport:
    """Check ``Re a >= alpha`` and ``Re a^{-1} >= 1/beta``.

    Local fields are checked on a midpoint grid (``resolution`` points per axis
    over the unit cell, or over ``box`` given as ``[(lo, hi), ...]``).  Block
    operators are checked on their splitting: ``Re a00 >= alpha``,
    ``Re a00^{-1} >= 1/beta``, ``Re (a^{-1})_11 >= 1/beta``, ``Re (a^{-1})_11^{-1} >= alpha``.
    """
    if hasattr(a, "blocks"):
        return _check_block_admissible(a, alpha, beta, tol)
    pts = _cell_grid(a.dim, resolution)
    if box is not None:
        lo = np.array([b[0] for b in box], dtype=float)
        hi = np.array([b[1] for b in box], dtype=float)
        pts = lo + pts * (hi - lo)
    mats = np.asarray(a(pts), dtype=complex if a.is_complex else float)
    det = np.linalg.det(mats)
    bad = np.abs(det) <= 1e-14 * np.max(np.abs(mats), axis=(-1, -2)) ** a.dim
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        return AdmissibilityReport(False, {"invertible": False}, {}, pts[i],
                                   f"singular coefficient at {pts[i].tolist()}")
    lam = _sym_min_eig(mats)
    lam_inv = _sym_min_eig(np.linalg.inv(mats))
    conds = {
        "re_a>=alpha": bool(lam.min() >= alpha - tol),
        "re_inv>=1/beta": bool(lam_inv.min() >= 1.0 / beta - tol),
    }
    worst = {"re_a>=alpha": float(lam.min()), "re_inv>=1/beta": float(lam_inv.min())}
    loc = pts[int(np.argmin(lam))] if not conds["re_a>=alpha"] else (
        pts[int(np.argmin(lam_inv))] if not conds["re_inv>=1/beta"] else None)
    return AdmissibilityReport(all(conds.values()), conds, worst, loc)


def _check_block_admissible(A, alpha, beta, tol):
    a00 = A.blocks[0][0]
    binv = A.inverse_blocks()
    b11 = binv[1][1]
    checks = {
        "re_a00>=alpha": (a00, alpha),
        "re_a00inv>=1/beta": (_safe_inv(a00), 1.0 / beta),
        "re_inv11>=1/beta": (b11, 1.0 / beta),
        "re_inv11inv>=alpha": (_safe_inv(b11), alpha),
    }
    conds, worst = {}, {}
    for key, (mat, bound) in checks.items():
        if mat is None:
            conds[key], worst[key] = False, float("nan")
            continue
        if mat.size == 0:
            conds[key], worst[key] = True, float("inf")
            continue
        lam = float(_sym_min_eig(mat))
        conds[key], worst[key] = lam >= bound - tol, lam
    return AdmissibilityReport(all(conds.values()), conds, worst)


def _safe_inv(m):
    try:
        return np.linalg.inv(m) if m.size else m
    except np.linalg.LinAlgError:
        return None


# kernels and nonlocal operators --------------------------------------------

@dataclass(frozen=True, eq=False)
class Kernel:
    """Scalar convolution kernel ``k`` on R^dim.

    ``factors`` optionally gives a separable representation
    ``k(x - y) = sum_r p_r(x) q_r(y)``, which keeps the discrete operator
    low-rank on large meshes.
    """

    rule: Callable[[np.ndarray], np.ndarray]
    dim: int = 1
    periodic: bool = True
    frequency: int = 1
    factors: tuple = ()
    sup_norm: float | None = None
    name: str = "kernel"
    params: dict = field(default_factory=dict)

    def __call__(self, d) -> np.ndarray:
        d = _as_points(d, self.dim)
        return np.broadcast_to(np.asarray(self.rule(self.frequency * d), dtype=float), d.shape[:-1])

    def factor_values(self, x):
        """Arrays P (m, r), Q (m, r) of the separable factors at points ``x``."""
        x = _as_points(x, self.dim) * self.frequency
        if not self.factors:
            return np.zeros((x.shape[0], 0)), np.zeros((x.shape[0], 0))
        P = np.stack([np.broadcast_to(p(x), x.shape[:-1]) for p, _ in self.factors], axis=1)
        Q = np.stack([np.broadcast_to(q(x), x.shape[:-1]) for _, q in self.factors], axis=1)
        return P, Q


def sine_kernel(amplitude: float, dim: int = 1) -> Kernel:
    """k(x) = amplitude * sin(2 pi x_1); mean value zero."""
    A = float(amplitude)
    tp = 2 * math.pi
    factors = (
        (lambda x: A * np.sin(tp * x[..., 0]), lambda y: np.cos(tp * y[..., 0])),
        (lambda x: -A * np.cos(tp * x[..., 0]), lambda y: np.sin(tp * y[..., 0])),
    )
    return Kernel(lambda d: A * np.sin(tp * d[..., 0]), dim, True, 1, factors, abs(A),
                  "kernel-sin", {"amplitude": A})


def constant_kernel(c: float, dim: int = 1) -> Kernel:
    c = float(c)
    factors = ((lambda x: np.full(x.shape[:-1], c), lambda y: np.ones(y.shape[:-1])),) if c else ()
    return Kernel(lambda d: np.full(d.shape[:-1], c), dim, True, 1, factors, abs(c),
                  "kernel-const", {"c": c})


class NonlocalOperator:
    """``shift * I + scale * C`` on the field space, ``C`` acting componentwise.

    ``C`` is stored either densely (``ne x ne``, ``C[e, e'] = k(x_e - x_e') |e'|``)
    or as ``left @ right.T`` with the element measures folded into ``right``.
    """

    def __init__(self, mesh: Mesh, dense=None, left=None, right=None, shift=0.0, scale=1.0,
                 kernel=None, young_bound=None, l1_difference_set=None):
        self.mesh = mesh
        self.dense = dense
        self.left = left
        self.right = right
        self.shift = float(shift)
        self.scale = float(scale)
        self.kernel = kernel
        self.young_bound = young_bound
        self.l1_difference_set = l1_difference_set

    @property
    def low_rank(self) -> bool:
        return self.dense is None

    @property
    def rank(self):
        return None if self.dense is not None else self.left.shape[1]

    @property
    def shape(self):
        n = self.mesh.field_size
        return (n, n)

    @property
    def norm_bound(self) -> float:
        """Upper estimate of the operator norm from the Young/Schur bound."""
        return abs(self.shift) + abs(self.scale) * float(self.young_bound)

    def with_affine(self, shift: float, scale: float) -> "NonlocalOperator":
        """The operator ``shift * I + scale * C`` sharing this convolution part."""
        return NonlocalOperator(self.mesh, self.dense, self.left, self.right, shift,
                                scale * self.scale, self.kernel, self.young_bound,
                                self.l1_difference_set)

    def conv_apply(self, values: np.ndarray) -> np.ndarray:
        """``C`` applied to an (ne, ...) array."""
        if self.dense is not None:
            return self.dense @ values
        return self.left @ (self.right.T @ values)

    def matvec(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f)
        ne, d = self.mesh.n_elements, self.mesh.dim
        tail = f.shape[1:]
        F = f.reshape((ne, d) + tail)
        out = self.shift * F + self.scale * self.conv_apply(F.reshape(ne, -1)).reshape(F.shape)
        return out.reshape(f.shape)

    __matmul__ = matvec

    def conv_matrix(self) -> np.ndarray:
        if self.dense is not None:
            return self.dense
        return self.left @ self.right.T

    def toarray(self) -> np.ndarray:
        d = self.mesh.dim
        return self.shift * np.eye(self.mesh.field_size) + self.scale * np.kron(self.conv_matrix(), np.eye(d))

    def adjoint_matvec(self, f):
        """Adjoint in the weighted field inner product."""
        w = self.mesh.measures
        ne, d = self.mesh.n_elements, self.mesh.dim
        F = np.asarray(f).reshape(ne, d, -1)
        WF = (w[:, None, None] * F).reshape(ne, -1)
        if self.dense is not None:
            CtWF = self.dense.T @ WF
        else:
            CtWF = self.right @ (self.left.T @ WF)
        out = self.shift * F + self.scale * (CtWF.reshape(F.shape) / w[:, None, None])
        return out.reshape(np.shape(f))

    def norm_estimate(self, iters: int = 60, seed: int = 0) -> float:
        """Power iteration for the weighted operator norm."""
        rng = np.random.default_rng(seed)
        w = self.mesh.field_weights
        x = rng.standard_normal(self.mesh.field_size)
        x /= math.sqrt(x @ (w * x))
        lam = 0.0
        for _ in range(iters):
            y = self.adjoint_matvec(self.matvec(x))
            lam = math.sqrt(max(x @ (w * y), 0.0))
            nrm = math.sqrt(y @ (w * y))
            if nrm == 0:
                return 0.0
            x = y / nrm
        return lam


def _schur_test_bound(kernel: Kernel, mesh: Mesh, max_rows: int = 256, chunk: int = 8) -> float:
    """sqrt(sup_x int_Om |k(x-y)| dy * sup_y int_Om |k(x-y)| dx) by midpoint quadrature.

    Exact over all elements for small meshes; on large meshes the suprema run
    over ``max_rows`` evenly spaced sample elements.
    """
    x, w = mesh.barycenters, mesh.measures
    ne = mesh.n_elements
    rows = np.arange(ne) if ne <= max_rows else np.unique(np.linspace(0, ne - 1, max_rows).astype(int))
    row_sup = col_sup = 0.0
    for start in range(0, rows.size, chunk):
        r = rows[start:start + chunk]
        diff = np.abs(kernel(x[r][:, None, :] - x[None, :, :]))
        row_sup = max(row_sup, float((diff * w[None, :]).sum(axis=1).max()))
        diffT = np.abs(kernel(x[None, :, :] - x[r][:, None, :]))
        col_sup = max(col_sup, float((diffT * w[None, :]).sum(axis=1).max()))
    return math.sqrt(row_sup * col_sup)


def _l1_difference_set(kernel: Kernel, mesh: Mesh, q: int | None = None) -> float:
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    span = hi - lo
    if q is None:
        q = 4096 if mesh.dim == 1 else 512
    s = (np.arange(2 * q) + 0.5) / (2 * q)
    axes = [-span[c] + 2 * span[c] * s for c in range(mesh.dim)]
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    cell = np.prod(2 * span) / pts.shape[0]
    return float(np.abs(kernel(pts)).sum() * cell)


def convolution_operator(k: Kernel, mesh: Mesh, dense: bool | None = None) -> NonlocalOperator:
    """Midpoint-quadrature discretisation of ``f -> int_Om k(x - y) f(y) dy``."""
    if k.dim != mesh.dim:
        raise InvalidArgumentError("kernel and mesh dimensions differ")
    if dense is None:
        dense = not k.factors or mesh.n_elements <= 2000
    x, w = mesh.barycenters, mesh.measures
    young = _schur_test_bound(k, mesh)
    l1 = _l1_difference_set(k, mesh)
    if dense:
        C = k(x[:, None, :] - x[None, :, :]) * w[None, :]
        return NonlocalOperator(mesh, dense=np.ascontiguousarray(C), kernel=k,
                                young_bound=young, l1_difference_set=l1)
    if not k.factors:
        raise InvalidArgumentError("low-rank convolution needs a separable kernel")
    P, Q = k.factor_values(x)
    return NonlocalOperator(mesh, left=P, right=Q * w[:, None], kernel=k,
                            young_bound=young, l1_difference_set=l1)


# weak-* pairings ------------------------------------------------------------

@dataclass
class WeakStarPairing:
    n: list
    values: np.ndarray
    limit: float | np.ndarray

    @property
    def errors(self) -> np.ndarray:
        return np.abs(self.values - self.limit).reshape(len(self.n), -1).max(axis=1)


def _gauss_box(interval, panels_per_unit, order=8):
    gx, gw = np.polynomial.legendre.leggauss(order)
    axes, weights = [], []
    for lo, hi in interval:
        p = max(1, int(math.ceil(panels_per_unit * (hi - lo))))
        edges = np.linspace(lo, hi, p + 1)
        h = np.diff(edges)
        pts = (edges[:-1, None] + 0.5 * h[:, None] * (gx[None, :] + 1)).ravel()
        wts = (0.5 * h[:, None] * gw[None, :]).ravel()
        axes.append(pts)
        weights.append(wts)
    grids = np.meshgrid(*axes, indexing="ij")
    wgrid = np.ones_like(grids[0])
    for c, wt in enumerate(weights):
        shape = [1] * len(axes)
        shape[c] = -1
        wgrid = wgrid * wt.reshape(shape)
    return np.stack([g.ravel() for g in grids], axis=1), wgrid.ravel()


def weak_star_pairing(a, n_list: Sequence[int], phi: Callable, interval=((0.0, 1.0),),
                      mean_resolution: int = 256) -> WeakStarPairing:
    """``int_I a(n x) phi(x) dx`` for each n, plus the mean-value pairing."""
    interval = tuple(tuple(map(float, iv)) for iv in interval)
    if np.ndim(interval[0]) == 0:
        interval = (interval,)
    values = []
    for n in n_list:
        pts, wts = _gauss_box(interval, 8 * max(1, int(n) * a.frequency))
        an = oscillate(a, n)(pts)
        ph = np.asarray(phi(pts if a.dim > 1 else pts[:, 0]))
        w = wts * ph
        values.append(np.tensordot(w, an, axes=(0, 0)))
    pts, wts = _gauss_box(interval, 8)
    ph = np.asarray(phi(pts if a.dim > 1 else pts[:, 0]))
    limit = mean_value(a, mean_resolution).value * float(wts @ ph)
    values = np.asarray(values)
    if values.ndim == 3 and values.shape[1:] == (1, 1):
        values = values[:, 0, 0]
        limit = float(np.asarray(limit).reshape(-1)[0])
    return WeakStarPairing(list(n_list), values, limit)
