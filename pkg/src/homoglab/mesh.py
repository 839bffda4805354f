"""Interval and unit-square meshes, their P1 discrete gradient, and JSON/COO I/O.

Discrete vector fields are elementwise constant and stored element-major:
component ``c`` of element ``e`` lives at index ``e * dim + c``.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray  # (nv, dim)
    elements: np.ndarray  # (ne, dim + 1)
    boundary: np.ndarray  # (nv,) bool
    domain_measure: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        e = np.ascontiguousarray(self.elements, dtype=np.int64)
        b = np.ascontiguousarray(self.boundary, dtype=bool)
        for arr in (v, e, b):
            arr.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "elements", e)
        object.__setattr__(self, "boundary", b)
        if e.shape[1] != v.shape[1] + 1:
            raise InvalidArgumentError("element connectivity does not match the dimension")
        if np.any(self.measures <= 0):
            raise InvalidArgumentError("mesh has an element of non-positive measure")

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_interior(self) -> int:
        return int(np.count_nonzero(~self.boundary))

    @property
    def field_size(self) -> int:
        return self.n_elements * self.dim

    @cached_property
    def measures(self) -> np.ndarray:
        p0 = self.vertices[self.elements[:, 0]]
        if self.dim == 1:
            return self.vertices[self.elements[:, 1], 0] - p0[:, 0]
        d1 = self.vertices[self.elements[:, 1]] - p0
        d2 = self.vertices[self.elements[:, 2]] - p0
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def barycenters(self) -> np.ndarray:
        return self.vertices[self.elements].mean(axis=1)

    @cached_property
    def interior_index(self) -> np.ndarray:
        """Vertex -> interior dof number, or -1 on the boundary."""
        idx = np.full(self.n_vertices, -1, dtype=np.int64)
        interior = np.flatnonzero(~self.boundary)
        idx[interior] = np.arange(interior.size)
        return idx

    @cached_property
    def field_weights(self) -> np.ndarray:
        """Quadrature weights of the field space (element measure per component)."""
        return np.repeat(self.measures, self.dim)

    @cached_property
    def lumped_mass(self) -> np.ndarray:
        """Vertex masses sum_{e ni v} |e| / (dim + 1)."""
        m = np.zeros(self.n_vertices)
        np.add.at(m, self.elements.ravel(), np.repeat(self.measures / (self.dim + 1), self.dim + 1))
        return m

    @cached_property
    def key(self) -> str:
        h = hashlib.sha1()
        for arr in (self.vertices, self.elements, self.boundary):
            h.update(arr.tobytes())
        return h.hexdigest()

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """Gradients of the barycentric basis, shape (ne, dim + 1, dim)."""
        pts = self.vertices[self.elements]
        if self.dim == 1:
            inv_h = 1.0 / self.measures
            return np.stack([-inv_h, inv_h], axis=1)[:, :, None]
        jac = np.stack([pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0]], axis=2)  # columns
        jinv = np.linalg.inv(jac)  # rows are grad(lambda_1), grad(lambda_2)
        g12 = jinv
        g0 = -g12.sum(axis=1, keepdims=True)
        return np.concatenate([g0, g12], axis=1)

    def gradient(self, dof_map: np.ndarray | None = None, n_dofs: int | None = None) -> sp.csr_matrix:
        """Sparse P1 gradient from dof values to the field space.

        ``dof_map`` sends vertices to dof numbers (-1 = eliminated); the default is
        the homogeneous Dirichlet numbering.
        """
        if dof_map is None:
            dof_map = self.interior_index
            n_dofs = self.n_interior
        elif n_dofs is None:
            n_dofs = int(dof_map.max()) + 1
        ne, k, d = self.basis_gradients.shape
        rows = (np.arange(ne)[:, None, None] * d + np.arange(d)[None, None, :])
        rows = np.broadcast_to(rows, (ne, k, d))
        cols = np.broadcast_to(dof_map[self.elements][:, :, None], (ne, k, d))
        vals = self.basis_gradients
        keep = cols >= 0
        mat = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(ne * d, n_dofs))
        return mat.tocsr()

    def cached(self, name, factory):
        """Per-mesh memo for derived immutable assets (splittings, factorizations)."""
        if name not in self._cache:
            self._cache[name] = factory()
        return self._cache[name]

    # I/O -----------------------------------------------------------------
    def to_json(self) -> str:
        return json.dumps(
            {
                "dimension": self.dim,
                "vertices": self.vertices.tolist(),
                "elements": self.elements.tolist(),
                "boundary": self.boundary.tolist(),
                "domain_measure": self.domain_measure,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "Mesh":
        data = json.loads(text)
        verts = np.asarray(data["vertices"], dtype=float).reshape(-1, int(data["dimension"]))
        return cls(verts, np.asarray(data["elements"]), np.asarray(data["boundary"]),
                   float(data.get("domain_measure", 1.0)))


@dataclass(frozen=True, eq=False)
class DiscreteGradient:
    """Gradient on the interior nodal space together with the field quadrature weights."""

    mesh: Mesh
    matrix: sp.csr_matrix
    weights: np.ndarray

    @classmethod
    def of(cls, mesh: Mesh) -> "DiscreteGradient":
        return mesh.cached("gradient", lambda: cls(mesh, mesh.gradient(), mesh.field_weights))

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, u):
        return self.matrix @ u

    def laplacian(self) -> sp.csc_matrix:
        """G^T W G, the constant-coefficient stiffness."""
        return (self.matrix.T @ sp.diags(self.weights) @ self.matrix).tocsc()


def build_interval_mesh(m: int, a_end: float = 0.0, b_end: float = 1.0) -> Mesh:
    if int(m) != m or m < 2:
        raise InvalidArgumentError("interval mesh needs m >= 2 cells")
    if not a_end < b_end:
        raise InvalidArgumentError("degenerate interval")
    m = int(m)
    x = np.linspace(a_end, b_end, m + 1)
    elements = np.stack([np.arange(m), np.arange(1, m + 1)], axis=1)
    boundary = np.zeros(m + 1, dtype=bool)
    boundary[[0, -1]] = True
    return Mesh(x[:, None], elements, boundary, b_end - a_end)


def build_square_mesh(m: int) -> Mesh:
    """Structured triangulation of (0,1)^2; each square is cut lower-left to upper-right."""
    if int(m) != m or m < 2:
        raise InvalidArgumentError("square mesh needs m >= 2")
    m = int(m)
    s = np.linspace(0.0, 1.0, m + 1)
    xx, yy = np.meshgrid(s, s, indexing="xy")
    verts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    i, j = np.meshgrid(np.arange(m), np.arange(m), indexing="xy")
    v00 = (j * (m + 1) + i).ravel()
    v10, v01, v11 = v00 + 1, v00 + m + 1, v00 + m + 2
    lower = np.stack([v00, v10, v11], axis=1)
    upper = np.stack([v00, v11, v01], axis=1)
    elements = np.stack([lower, upper], axis=1).reshape(-1, 3)
    bd = (np.isclose(verts, 0.0) | np.isclose(verts, 1.0)).any(axis=1)
    return Mesh(verts, elements, bd, 1.0)


def periodic_dof_map(mesh: Mesh) -> np.ndarray:
    """Identify vertices across opposite faces of the unit cell [0,1]^dim."""
    x = mesh.vertices
    # structured meshes only: recover the per-axis grid index
    idx = []
    for c in range(mesh.dim):
        grid = np.unique(np.round(x[:, c], 14))
        m = grid.size - 1
        k = np.rint(x[:, c] * m).astype(np.int64) % m
        idx.append((k, m))
    dof = np.zeros(mesh.n_vertices, dtype=np.int64)
    stride = 1
    for k, m in idx:
        dof += k * stride
        stride *= m
    return dof


def write_atomic(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def export_coo(matrix, path=None) -> str:
    """Coordinate-list text, one ``row col value`` triple per line."""
    coo = sp.coo_matrix(matrix)
    conv = complex if np.iscomplexobj(coo.data) else float
    lines = [f"{r} {c} {conv(v)!r}".replace(" (", " ").rstrip(")") for r, c, v in zip(coo.row, coo.col, coo.data)]
    text = "\n".join(lines) + ("\n" if lines else "")
    if path is not None:
        write_atomic(path, text)
    return text


def import_coo(text: str, shape) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for line in text.splitlines():
        if not line.strip():
            continue
        r, c, v = line.split()
        rows.append(int(r))
        cols.append(int(c))
        vals.append(complex(v) if "j" in v else float(v))
    return sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
