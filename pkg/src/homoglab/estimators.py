"""scikit-learn style wrappers around the functional core.

The wrappers follow the estimator conventions (constructor stores
hyperparameters only, ``fit`` sets trailing-underscore attributes, the
learned state is checked with ``check_is_fitted``) so they compose with
``get_params``/``set_params``/``clone``.  ``fit`` does not learn from data:
it builds and solves the configured problem.
"""
from __future__ import annotations

import warnings

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import presets
from .errors import InvalidArgumentError
from .evolutionary import (TransformAccuracyWarning, WeightedSignal, build_dynamic_models,
                           make_time_grid, solve_evolutionary)
from .fem import flux, nodal_full, solve_lax_milgram
from .homogenisation import effective_tensor
from .mesh import build_interval_mesh, build_square_mesh


def _resolve(coefficient, params, dim=None):
    if isinstance(coefficient, str):
        params = dict(params or {})
        if dim is not None and "dim" in presets.COEFFICIENTS.get(coefficient, presets.COEFFICIENTS["constant"]).defaults:
            params.setdefault("dim", dim)
        return presets.coefficient(coefficient, params)
    return coefficient


def _mesh(dim, cells):
    return build_interval_mesh(cells) if dim == 1 else build_square_mesh(cells)


def _locate(mesh, X, tree, k=8):
    """Element index and barycentric weights of each point in ``X`` (P1 evaluation)."""
    el = mesh.elements
    _, cand = tree.query(X, k=min(k, mesh.n_elements))
    cand = np.atleast_2d(cand)
    idx = np.full(X.shape[0], -1)
    lam = np.zeros((X.shape[0], mesh.dim + 1))
    for j in range(cand.shape[1]):
        todo = idx < 0
        if not todo.any():
            break
        e = cand[todo, j]
        V = mesh.vertices[el[e]]                       # (p, d+1, d)
        T = np.swapaxes(V[:, 1:] - V[:, :1], 1, 2)     # (p, d, d)
        rhs = X[todo] - V[:, 0]
        mu = np.linalg.solve(T, rhs[..., None])[..., 0]
        l = np.concatenate([1 - mu.sum(1, keepdims=True), mu], axis=1)
        ok = np.all(l >= -1e-10, axis=1)
        pos = np.flatnonzero(todo)[ok]
        idx[pos], lam[pos] = e[ok], l[ok]
    if np.any(idx < 0):
        raise InvalidArgumentError("evaluation points must lie in the closed unit domain")
    return idx, lam


class LaxMilgramSolver(BaseEstimator):
    """Dirichlet problem ``-div a grad u = f`` on the unit interval or square.

    ``predict(X)`` evaluates the P1 solution at points ``X`` of shape
    ``(k, dim)``.
    """

    def __init__(self, coefficient="sin-shift", coefficient_params=None, dim=1, cells=64, f=1.0,
                 frequency=1):
        self.coefficient = coefficient
        self.coefficient_params = coefficient_params
        self.dim = dim
        self.cells = cells
        self.f = f
        self.frequency = frequency

    def fit(self, X=None, y=None):
        from .coefficients import oscillate
        a = _resolve(self.coefficient, self.coefficient_params, self.dim)
        if self.frequency != 1:
            a = oscillate(a, self.frequency)
        self.mesh_ = _mesh(self.dim, self.cells)
        self.solution_ = solve_lax_milgram(self.mesh_, a, self.f)
        self.nodal_ = nodal_full(self.mesh_, self.solution_.u)
        self.flux_ = flux(self.mesh_, a, self.solution_.u).values.reshape(self.mesh_.n_elements, -1)
        self._tree = cKDTree(self.mesh_.barycenters.reshape(self.mesh_.n_elements, -1))
        return self

    def predict(self, X):
        check_is_fitted(self, "solution_")
        X = check_array(X, ensure_2d=True)
        if X.shape[1] != self.dim:
            raise InvalidArgumentError(f"expected points with {self.dim} coordinates, got {X.shape[1]}")
        idx, lam = _locate(self.mesh_, X, self._tree)
        return np.sum(lam * self.nodal_[self.mesh_.elements[idx]], axis=1)

    def predict_flux(self, X):
        check_is_fitted(self, "solution_")
        X = check_array(X, ensure_2d=True)
        idx, _ = _locate(self.mesh_, X, self._tree)
        return self.flux_[idx]


class CellHomogenizer(BaseEstimator):
    """Effective tensor of a periodic coefficient.

    ``predict(X)`` maps macroscopic gradients (rows of ``X``) to homogenised
    fluxes ``a_hom @ xi``.
    """

    def __init__(self, coefficient="sin-shift", coefficient_params=None, resolution=64):
        self.coefficient = coefficient
        self.coefficient_params = coefficient_params
        self.resolution = resolution

    def fit(self, X=None, y=None):
        a = _resolve(self.coefficient, self.coefficient_params)
        res = effective_tensor(a, self.resolution)
        self.effective_tensor_ = np.real_if_close(res.matrix, tol=1e6)
        self.correctors_ = res.correctors
        self.harmonic_discrepancy_ = res.harmonic_discrepancy
        self.n_features_in_ = a.dim
        return self

    def predict(self, X):
        check_is_fitted(self, "effective_tensor_")
        X = check_array(X, ensure_2d=True)
        if X.shape[1] != self.n_features_in_:
            raise InvalidArgumentError(f"expected {self.n_features_in_} gradient components, got {X.shape[1]}")
        return X @ self.effective_tensor_.T


class EvolutionarySolver(TransformerMixin, BaseEstimator):
    """Solution operator of a dynamic model preset, as a transformer.

    ``transform(F)`` takes a source sampled on the time grid, shape
    ``(count, state_dim)``, and returns the solution on the same grid.
    """

    def __init__(self, model="heat-1d", cells=64, frequency=1, nu=1.0, t_end=24.0, count=512,
                 coefficient_params=None):
        self.model = model
        self.cells = cells
        self.frequency = frequency
        self.nu = nu
        self.t_end = t_end
        self.count = count
        self.coefficient_params = coefficient_params

    def fit(self, X=None, y=None):
        spec = presets.model(self.model, {})
        a = _resolve(spec["coefficient"], self.coefficient_params, spec["dim"])
        mesh = _mesh(spec["dim"], self.cells)
        models, _ = build_dynamic_models(spec["kind"], mesh, a, [self.frequency], spec["projected"])
        self.model_ = models[self.frequency]
        self.grid_ = make_time_grid(self.t_end, self.count)
        self.n_features_in_ = self.model_.space.dim
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, ensure_2d=True)
        if X.shape != (self.grid_.count, self.n_features_in_):
            raise InvalidArgumentError(
                f"source must have shape {(self.grid_.count, self.n_features_in_)}, got {X.shape}")
        F = WeightedSignal(self.grid_, X, float(self.nu))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TransformAccuracyWarning)
            sol = solve_evolutionary(self.model_.law, self.model_.A, F, float(self.nu))
        self.residual_ = sol.residual
        return np.real_if_close(sol.U.values, tol=1e6)

    @property
    def times(self):
        check_is_fitted(self, "grid_")
        return self.grid_.times
