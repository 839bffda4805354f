"""Config-driven experiment runner.

A run reads one YAML file, builds the presets it names, executes a single
experiment kind and writes ``report.csv``, ``report.json`` and
``plotdata.csv`` to the output directory.  ``report.json`` is a pure function
of the config and seed; wall-clock data lives under its ``timestamps`` key.
"""
from __future__ import annotations

import copy
import json
import math
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import presets
from .errors import ConfigError, HomoglabError
from .helmholtz import build_splitting, schur_identity_batch
from .homogenisation import (SCHEMA_VERSION, ConvergenceReport, MeshPolicy, divcurl_experiment,
                             g_convergence_experiment, h_convergence_experiment,
                             nonlocal_homogenisation_experiment)
from .mesh import DiscreteGradient, build_interval_mesh, build_square_mesh, write_atomic

KINDS = ("g-conv", "h-conv", "nonlocal", "divcurl", "dynamic-heat", "dynamic-wave",
         "dynamic-maxwell", "schur-suite", "splitting-check")

DEFAULTS = {
    "g-conv": {
        "coefficient": {"preset": "sin-harmonic"}, "n_list": [8, 16, 32, 64],
        "tests": {"preset": "sin-products", "params": {"kmax": 1}},
        "tolerances": {"solution_error": 1e-2},
        "criteria": {"coefficient_gap": {"min": 0.2}},
    },
    "h-conv": {
        "coefficient": {"preset": "sin-harmonic"}, "n_list": [8, 16, 32, 64],
        "tests": {"preset": "sin-products", "params": {"kmax": 1}},
        "tolerances": {"solution_error": 1e-2, "flux_error": 1e-2},
        "criteria": {"coefficient_gap": {"min": 0.2}, "flux_error": {"slope": [-1.6, -0.5]}},
    },
    "nonlocal": {
        "kernel": {"preset": "kernel-sin"}, "n_list": [4, 8, 16, 32],
        "tests": {"preset": "sin-products", "params": {"kmax": 1}},
        "tolerances": {"solution_error": 5e-2},
        "criteria": {"young_bound": {"max": 1.0}},
    },
    "divcurl": {
        "coefficient": {"preset": "sin-shift"}, "n_list": [8, 16, 32, 64],
        "tolerances": {"solution_error": 1e-2},
    },
    "dynamic-heat": {
        "model": {"preset": "heat-1d"}, "n_list": [4, 8, 16, 32],
        "tolerances": {"solution_error": 5e-2},
        "criteria": {"solution_error": {"decreasing": 0.0, "from_n": 8},
                     "norm_surrogate": {"decreasing": 0.1, "from_n": 8}},
    },
    "dynamic-wave": {
        "model": {"preset": "wave-1d"}, "n_list": [4, 8, 16, 32],
        "tolerances": {"solution_error": 5e-2},
        "criteria": {"solution_error": {"decreasing": 0.0, "from_n": 8},
                     "norm_surrogate": {"decreasing": 0.1, "from_n": 8}},
    },
    "dynamic-maxwell": {
        "model": {"preset": "maxwell-1d"}, "n_list": [4, 8, 16, 32],
        "tolerances": {"solution_error": 5e-2},
        "criteria": {"solution_error": {"decreasing": 0.0, "from_n": 8},
                     "norm_surrogate": {"decreasing": 0.1, "from_n": 8}},
    },
    "schur-suite": {"n_list": [40], "samples": 200, "tolerances": {"solution_error": 1e-10}},
    "splitting-check": {"n_list": [4, 8, 16], "samples": 50, "tolerances": {"solution_error": 1e-12}},
}

# fixed 1D mesh when the config gives no mesh.cells; 2D meshes always follow the policy
DEFAULT_1D_CELLS = {"g-conv": 8192, "h-conv": 8192, "divcurl": 4096}
MAX_SQUARE_CELLS = 1024

COMMON = {"f": 1.0, "cell_resolution": None, "seed": 0, "out": "homoglab-out", "mesh": {},
          "tolerances": {}, "criteria": {}, "tests": None,
          "time": {"nu": 1.0, "t_end": 24.0, "count": 1024, "probes": 20, "schur": False}}

ALLOWED = set(COMMON) | {"kind", "coefficient", "kernel", "model", "n_list", "samples"}
MESH_KEYS = {"cells", "cells_per_period", "min_cells", "max_cells"}
CRITERION_KEYS = {"min", "max", "slope", "decreasing", "from_n"}


@dataclass
class ExperimentConfig:
    kind: str
    n_list: list
    seed: int
    out: str
    f: float
    cell_resolution: int | None
    mesh: dict
    tolerances: dict
    criteria: dict
    tests: dict | None = None
    coefficient: dict | None = None
    kernel: dict | None = None
    model: dict | None = None
    time: dict = field(default_factory=dict)
    samples: int | None = None

    @classmethod
    def from_dict(cls, raw) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping", "<root>")
        unknown = set(raw) - ALLOWED
        if unknown:
            key = sorted(unknown)[0]
            raise ConfigError(f"unknown config key {key!r}", key)
        kind = raw.get("kind")
        if kind not in KINDS:
            raise ConfigError(f"kind must be one of {', '.join(KINDS)} (got {kind!r})", "kind")
        merged = copy.deepcopy(COMMON)
        for src in (DEFAULTS[kind], raw):
            for k, v in src.items():
                if isinstance(v, dict) and isinstance(merged.get(k), dict) and k not in ("tolerances", "criteria"):
                    merged[k] = {**merged[k], **copy.deepcopy(v)}
                else:
                    merged[k] = copy.deepcopy(v)
        cfg = cls(**{k: merged.get(k) for k in cls.__dataclass_fields__})
        cfg.validate()
        return cfg

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}", "<root>") from exc
        return cls.from_dict(raw if raw is not None else {})

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}", "--config") from exc
        return cls.from_yaml(text)

    def validate(self) -> None:
        self._coerce_numbers()
        nl = self.n_list
        if (not isinstance(nl, list) or not nl
                or not all(isinstance(n, int) and not isinstance(n, bool) and n >= 1 for n in nl)):
            raise ConfigError("n_list must be a non-empty list of positive integers", "n_list")
        if any(b <= a for a, b in zip(nl, nl[1:])):
            raise ConfigError("n_list must be strictly increasing", "n_list")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed must be an integer", "seed")
        if not isinstance(self.tolerances, dict):
            raise ConfigError("tolerances must be a mapping", "tolerances")
        for k, v in self.tolerances.items():
            if not _positive(v):
                raise ConfigError(f"tolerance must be a positive number (got {v!r})", f"tolerances.{k}")
        if not isinstance(self.criteria, dict):
            raise ConfigError("criteria must be a mapping", "criteria")
        for name, spec in self.criteria.items():
            if not isinstance(spec, dict) or set(spec) - CRITERION_KEYS:
                raise ConfigError(f"criterion keys must be among {sorted(CRITERION_KEYS)}", f"criteria.{name}")
            if "slope" in spec and (not isinstance(spec["slope"], list) or len(spec["slope"]) != 2):
                raise ConfigError("slope criterion needs [low, high]", f"criteria.{name}.slope")
        if not isinstance(self.mesh, dict) or set(self.mesh) - MESH_KEYS:
            raise ConfigError(f"mesh keys must be among {sorted(MESH_KEYS)}", "mesh")
        for k, v in self.mesh.items():
            if v is not None and (not isinstance(v, int) or v < 1):
                raise ConfigError("mesh entries must be positive integers", f"mesh.{k}")
        for k in ("cell_resolution",):
            v = getattr(self, k)
            if v is not None and (not isinstance(v, int) or v < 2):
                raise ConfigError(f"{k} must be an integer >= 2", k)
        for k in ("nu", "t_end"):
            if not _positive(self.time.get(k)):
                raise ConfigError(f"{k} must be positive", f"time.{k}")
        for k in ("count", "probes"):
            if not isinstance(self.time.get(k), int) or self.time[k] < 1:
                raise ConfigError(f"{k} must be a positive integer", f"time.{k}")
        if self.samples is not None and (not isinstance(self.samples, int) or self.samples < 1):
            raise ConfigError("samples must be a positive integer", "samples")
        for slot in ("coefficient", "kernel", "model", "tests"):
            spec = getattr(self, slot)
            if spec is None:
                continue
            if isinstance(spec, str):
                spec = {"preset": spec}
                setattr(self, slot, spec)
            if not isinstance(spec, dict) or "preset" not in spec or set(spec) - {"preset", "params"}:
                raise ConfigError("preset reference needs 'preset' and optional 'params'", slot)
            if not isinstance(spec.get("params", {}) or {}, dict):
                raise ConfigError("params must be a mapping", f"{slot}.params")
        # resolve names now so unknown presets fail before any work
        self.build_presets()

    def _coerce_numbers(self) -> None:
        # YAML 1.1 reads "1e-2" (no dot) as a string
        if isinstance(self.tolerances, dict):
            self.tolerances = {k: _num(v) for k, v in self.tolerances.items()}
        if isinstance(self.criteria, dict):
            for spec in self.criteria.values():
                if isinstance(spec, dict):
                    for key in ("min", "max", "decreasing"):
                        if key in spec:
                            spec[key] = _num(spec[key])
                    if isinstance(spec.get("slope"), list):
                        spec["slope"] = [_num(v) for v in spec["slope"]]
        if isinstance(self.time, dict):
            for key in ("nu", "t_end"):
                if key in self.time:
                    self.time[key] = _num(self.time[key])
        self.f = _num(self.f)

    def build_presets(self) -> dict:
        out = {}
        if self.coefficient:
            out["coefficient"] = presets.coefficient(self.coefficient["preset"], self.coefficient.get("params"))
        if self.kernel:
            out["kernel"] = presets.kernel(self.kernel["preset"], self.kernel.get("params"))
        if self.model:
            m = presets.model(self.model["preset"], self.model.get("params"))
            want = self.kind.split("-", 1)[1] if self.kind.startswith("dynamic-") else None
            if want and m["kind"] != want:
                raise ConfigError(f"model preset {self.model['preset']!r} is not a {want} model", "model.preset")
            params = dict(m["coefficient_params"])
            known = presets.COEFFICIENTS.get(m["coefficient"])
            if known is not None and "dim" in known.defaults:
                params.setdefault("dim", m["dim"])
            m["field"] = presets.coefficient(m["coefficient"], params, "model.params")
            out["model"] = m
        return out

    def to_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__}


def _num(v):
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError:
            return v
    return v


def _positive(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) and v > 0


@dataclass
class RunSummary:
    kind: str
    passed: bool
    verdicts: dict
    scalars: dict
    timings: dict
    files: dict

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1

    def to_dict(self) -> dict:
        return {"kind": self.kind, "passed": self.passed, "verdicts": self.verdicts,
                "scalars": self.scalars, "timings": self.timings, "files": self.files}


# experiment dispatch ----------------------------------------------------------------

def _policy(cfg):
    m = cfg.mesh
    return MeshPolicy(m.get("cells_per_period") or 20, m.get("min_cells") or 16, m.get("max_cells") or 1 << 14)


def _mesh(cfg, dim, n_max):
    cells = cfg.mesh.get("cells")
    if cells is None and dim == 1:
        cells = DEFAULT_1D_CELLS.get(cfg.kind)
    if cells is None:
        cells = _policy(cfg).cells(n_max)
        field = "n_list"
    else:
        field = "mesh.cells"
    if dim == 2 and cells > MAX_SQUARE_CELLS:
        raise ConfigError(f"a {cells} x {cells} square mesh exceeds the {MAX_SQUARE_CELLS} cap", field)
    return build_interval_mesh(cells) if dim == 1 else build_square_mesh(cells)


def _tests(cfg, dim):
    if not cfg.tests:
        return None
    return presets.test_set(cfg.tests["preset"], dim, cfg.tests.get("params"))


def _run_static(cfg, built):
    a = built["coefficient"]
    mesh = _mesh(cfg, a.dim, max(cfg.n_list))
    common = dict(f=cfg.f, mesh=mesh, policy=_policy(cfg), cell_resolution=cfg.cell_resolution,
                  tolerances=cfg.tolerances)
    if cfg.kind == "g-conv":
        return g_convergence_experiment(a, cfg.n_list, tests=_tests(cfg, a.dim), **common)
    if cfg.kind == "h-conv":
        return h_convergence_experiment(a, cfg.n_list, tests=_tests(cfg, a.dim), **common)
    return divcurl_experiment(a, cfg.n_list, **common)


def _run_nonlocal(cfg, built):
    k = built["kernel"]
    mesh = _mesh(cfg, k.dim, max(cfg.n_list))
    return nonlocal_homogenisation_experiment(k, cfg.n_list, cfg.f, _tests(cfg, k.dim), mesh,
                                              _policy(cfg), cfg.tolerances)


def _run_dynamic(cfg, built):
    from .evolutionary import dynamic_homogenisation_experiment
    m = built["model"]
    mesh = _mesh(cfg, m["dim"], max(cfg.n_list))
    t = cfg.time
    return dynamic_homogenisation_experiment(
        m["kind"], m["field"], cfg.n_list, mesh, nu=float(t["nu"]), t_end=float(t["t_end"]),
        count=int(t["count"]), probes=int(t["probes"]), seed=cfg.seed, projected=m["projected"],
        schur=bool(t.get("schur")), tolerances=cfg.tolerances)


def _run_schur(cfg, built):
    rows = []
    for max_dim in cfg.n_list:
        if max_dim < 2:
            raise ConfigError("schur-suite dimensions must be >= 2", "n_list")
        rep = schur_identity_batch(cfg.samples or 200, max_dim, cfg.seed)
        rows += [{"n": max_dim, "test_id": k, "solution_error": v, "flux_error": float("nan")}
                 for k, v in sorted(rep.residuals.items())]
    return ConvergenceReport(
        "schur-suite", list(cfg.n_list), rows, limit_model="inversion oracle",
        witness="schur-complement-identities", tolerances=cfg.tolerances, sequence=False,
        scalars={"max_residual": max(r["solution_error"] for r in rows)},
        metadata={"samples": cfg.samples or 200, "seed": cfg.seed})


def splitting_residuals(m: int, samples: int = 50, seed: int = 0) -> dict:
    """Projector algebra on the ``m x m`` square mesh, measured on random data."""
    mesh = build_square_mesh(m)
    S = build_splitting(mesh, "dense")
    w = mesh.field_weights
    P0 = S.B0 @ (S.B0.T * w[None, :])
    P1 = S.B1 @ (S.B1.T * w[None, :])
    rng = np.random.default_rng(seed)
    G = DiscreteGradient.of(mesh).matrix
    U = rng.standard_normal((mesh.n_interior, samples))
    GU = G @ U
    wn = lambda X: np.sqrt(np.sum(w[:, None] * X * X, axis=0))
    return {
        "idempotent": float(np.abs(P0 @ P0 - P0).max()),
        "complement": float(np.abs(P0 + P1 - np.eye(S.size)).max()),
        "gradient-annihilation": float(np.max(wn(P1 @ GU) / wn(GU))),
        "orthonormality": S.orthonormality_error(),
    }


def _run_splitting(cfg, built):
    rows, dims = [], {}
    for m in cfg.n_list:
        res = splitting_residuals(m, cfg.samples or 50, cfg.seed)
        rows += [{"n": m, "test_id": k, "solution_error": v, "flux_error": float("nan")} for k, v in res.items()]
        dims[str(m)] = list(build_splitting(build_square_mesh(m), "dense").dims)
    return ConvergenceReport(
        "splitting-check", list(cfg.n_list), rows, limit_model="orthogonal projector algebra",
        witness="helmholtz-splitting", tolerances=cfg.tolerances, sequence=False,
        scalars={"max_residual": max(r["solution_error"] for r in rows)},
        metadata={"dims": dims, "samples": cfg.samples or 50})


DISPATCH = {"g-conv": _run_static, "h-conv": _run_static, "divcurl": _run_static,
            "nonlocal": _run_nonlocal, "dynamic-heat": _run_dynamic, "dynamic-wave": _run_dynamic,
            "dynamic-maxwell": _run_dynamic, "schur-suite": _run_schur, "splitting-check": _run_splitting}


def execute(cfg: ExperimentConfig) -> ConvergenceReport:
    """Run the experiment named by ``cfg`` and attach its configured criteria."""
    report = DISPATCH[cfg.kind](cfg, cfg.build_presets())
    report.criteria = copy.deepcopy(cfg.criteria)
    return report


def _summary_scalars(report: ConvergenceReport) -> dict:
    out = {f"final_{k}": report.final_error(k) for k in report.slopes}
    out.update({f"slope_{k}": v for k, v in report.slopes.items()})
    out.update(report.scalars)
    return {k: (None if isinstance(v, float) and math.isnan(v) else float(v)) for k, v in out.items()}


def run(config, out=None, seed=None) -> RunSummary:
    """Execute one config (path, YAML text mapping or :class:`ExperimentConfig`) and write its artifacts."""
    if isinstance(config, ExperimentConfig):
        cfg = copy.deepcopy(config)
    elif isinstance(config, dict):
        cfg = ExperimentConfig.from_dict(config)
    else:
        cfg = ExperimentConfig.load(config)
    if seed is not None:
        cfg.seed = int(seed)
    if out is not None:
        cfg.out = str(out)
    outdir = Path(cfg.out)
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    report = execute(cfg)
    elapsed = time.perf_counter() - t0
    outdir.mkdir(parents=True, exist_ok=True)
    files = {name: str(outdir / name) for name in ("report.csv", "report.json", "plotdata.csv")}
    payload = {
        "schema": SCHEMA_VERSION,
        "config": cfg.to_dict() | {"out": None},
        "report": report.to_dict(),
        "timestamps": {"started": started, "wall_clock_seconds": round(elapsed, 3)},
    }
    write_atomic(files["report.csv"], report.to_csv())
    write_atomic(files["plotdata.csv"], report.plot_csv())
    write_atomic(files["report.json"], json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return RunSummary(cfg.kind, report.passed, report.verdicts, _summary_scalars(report),
                      {"experiment_seconds": elapsed}, files)


__all__ = ["ExperimentConfig", "RunSummary", "run", "execute", "KINDS", "DEFAULTS",
           "splitting_residuals", "HomoglabError"]
