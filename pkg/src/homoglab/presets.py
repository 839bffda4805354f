"""Named coefficient, kernel, model and test-set presets for configs and the CLI."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .coefficients import CoefficientField, Kernel, constant_kernel, sine_kernel
from .errors import ConfigError
from .homogenisation import sine_products

TWO_PI = 2 * math.pi


@dataclass(frozen=True)
class Preset:
    name: str
    category: str
    defaults: dict
    build: Callable
    summary: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def signature(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.defaults.items())
        return f"{self.name} {{{args}}}"


def _sin_shift(c=2.0, dim=1):
    c = float(c)
    return CoefficientField(lambda y: c + np.sin(TWO_PI * y[..., 0]), int(dim), True,
                            c - 1, c + 1, "sin-shift", params={"c": c})


def _sin_harmonic(c=2.0, dim=1):
    c = float(c)
    return CoefficientField(lambda y: 1.0 / (c + np.sin(TWO_PI * y[..., 0])), int(dim), True,
                            1 / (c + 1), 1 / (c - 1), "sin-harmonic", params={"c": c})


def _constant(c=1.0, dim=1):
    return CoefficientField.constant(float(c), int(dim), alpha=float(c), beta=float(c),
                                     name="constant", params={"c": float(c)})


def _two_phase(a1=1.0, a2=4.0, theta=0.5, dim=1):
    a1, a2, theta = float(a1), float(a2), float(theta)
    if not 0.0 < theta < 1.0:
        raise ConfigError("two-phase theta must lie in (0, 1)", "coefficient.params.theta")

    def rule(y):
        frac = y[..., 0] - np.floor(y[..., 0])
        return np.where(frac < theta, a1, a2)

    return CoefficientField(rule, int(dim), True, min(a1, a2), max(a1, a2), "two-phase",
                            params={"a1": a1, "a2": a2, "theta": theta})


def _laminate(c1=2.0, s1=1.0, c2=2.0, s2=1.0):
    c1, s1, c2, s2 = map(float, (c1, s1, c2, s2))

    def rule(y):
        s = np.sin(TWO_PI * y[..., 0])
        out = np.zeros(y.shape[:-1] + (2, 2))
        out[..., 0, 0] = c1 + s1 * s
        out[..., 1, 1] = c2 + s2 * s
        return out

    lo = min(c1 - abs(s1), c2 - abs(s2))
    hi = max(c1 + abs(s1), c2 + abs(s2))
    return CoefficientField(rule, 2, True, lo, hi, "laminate",
                            params={"c1": c1, "s1": s1, "c2": c2, "s2": s2})


def _rotation(beta=2.0):
    mat = np.array([[1.0, -1.0], [1.0, 1.0]])
    return CoefficientField.constant(mat, 2, alpha=1.0, beta=float(beta), name="rotation",
                                     params={"beta": float(beta)})


def _kernel_sin(amplitude=0.4, dim=2):
    return sine_kernel(float(amplitude), int(dim))


def _kernel_const(c=0.2, dim=2):
    return constant_kernel(float(c), int(dim))


def _kernel_zero(dim=2):
    return constant_kernel(0.0, int(dim))


def _model(kind, dim, projected=False):
    def build(coefficient="sin-shift", **params):
        return {"kind": kind, "dim": dim, "projected": projected,
                "coefficient": coefficient, "coefficient_params": params}
    return build


COEFFICIENTS = {p.name: p for p in [
    Preset("constant", "coefficient", {"c": 1.0, "dim": 1}, _constant, "c * I"),
    Preset("sin-shift", "coefficient", {"c": 2.0, "dim": 1}, _sin_shift, "c + sin(2 pi x1)"),
    Preset("sin-harmonic", "coefficient", {"c": 2.0, "dim": 1}, _sin_harmonic, "1 / (c + sin(2 pi x1))"),
    Preset("two-phase", "coefficient", {"a1": 1.0, "a2": 4.0, "theta": 0.5, "dim": 1}, _two_phase,
           "a1 on [0, theta), a2 on [theta, 1), periodic"),
    Preset("laminate", "coefficient", {"c1": 2.0, "s1": 1.0, "c2": 2.0, "s2": 1.0}, _laminate,
           "diag(c1 + s1 sin(2 pi y1), c2 + s2 sin(2 pi y1)), 2D"),
    Preset("rotation", "coefficient", {"beta": 2.0}, _rotation, "I + J with J the quarter rotation, 2D"),
]}

KERNELS = {p.name: p for p in [
    Preset("kernel-sin", "kernel", {"amplitude": 0.4, "dim": 2}, _kernel_sin, "amplitude * sin(2 pi x1)"),
    Preset("kernel-const", "kernel", {"c": 0.2, "dim": 2}, _kernel_const, "constant kernel c"),
    Preset("kernel-zero", "kernel", {"dim": 2}, _kernel_zero, "zero kernel"),
]}

MODELS = {p.name: p for p in [
    Preset("heat-1d", "model", {"coefficient": "sin-shift"}, _model("heat", 1), "first-order heat system"),
    Preset("wave-1d", "model", {"coefficient": "sin-shift"}, _model("wave", 1), "first-order wave system"),
    Preset("wave-1d-projected", "model", {"coefficient": "sin-shift"}, _model("wave", 1, True),
           "wave system with gradient-projected flux"),
    Preset("maxwell-1d", "model", {"coefficient": "sin-shift"}, _model("maxwell", 1),
           "1D Maxwell with eps = mu = coefficient"),
    Preset("heat-2d", "model", {"coefficient": "sin-shift"}, _model("heat", 2), "heat system on the unit square"),
]}

TEST_SETS = {p.name: p for p in [
    Preset("sin-products", "test-set", {"kmax": 3}, lambda dim, kmax=3: sine_products(dim, int(kmax)),
           "prod_c sin(k_c pi x_c), 1 <= k_c <= kmax"),
]}

CATALOG = {"coefficient": COEFFICIENTS, "kernel": KERNELS, "model": MODELS, "test-set": TEST_SETS}


def _lookup(category: str, name: str, path: str) -> Preset:
    table = CATALOG[category]
    if name not in table:
        raise ConfigError(f"unknown {category} preset {name!r} (known: {', '.join(sorted(table))})", path)
    return table[name]


def _checked(p: Preset, params, path: str) -> dict:
    params = dict(params or {})
    if p.category == "model":
        return params
    extra = set(params) - set(p.defaults)
    if extra:
        raise ConfigError(f"preset {p.name!r} has no parameter(s) {sorted(extra)}", f"{path}.params")
    return params


def coefficient(name: str, params=None, path: str = "coefficient") -> CoefficientField:
    p = _lookup("coefficient", name, f"{path}.preset")
    return p.build(**_checked(p, params, path))


def kernel(name: str, params=None, path: str = "kernel") -> Kernel:
    p = _lookup("kernel", name, f"{path}.preset")
    return p.build(**_checked(p, params, path))


def model(name: str, params=None, path: str = "model") -> dict:
    p = _lookup("model", name, f"{path}.preset")
    return p.build(**_checked(p, params, path))


def test_set(name: str, dim: int, params=None, path: str = "tests") -> dict:
    p = _lookup("test-set", name, f"{path}.preset")
    return p.build(dim, **_checked(p, params, path))


test_set.__test__ = False  # keep pytest from collecting it


def list_presets() -> dict:
    """Catalog ``{category: [(signature, summary), ...]}`` in a fixed order."""
    return {cat: [(p.signature, p.summary) for p in table.values()] for cat, table in CATALOG.items()}


def format_catalog() -> str:
    lines = []
    for cat, entries in list_presets().items():
        lines.append(f"[{cat}]")
        lines.extend(f"  {sig:<55} {summary}" for sig, summary in entries)
    return "\n".join(lines) + "\n"
