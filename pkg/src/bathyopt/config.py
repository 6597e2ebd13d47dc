"""Run configurations and the two experiment presets.

A configuration is a JSON document::

    {
      "schema_version": 1,
      "command": "optimize",
      "physical": {"T0": 20.0, "g": 9.81, "z0": 3.0, "direction": [0.0, 1.0]},
      "L": 542.49...,
      "mesh": {"nx": 32, "ny": 32, "domain": [0, 0, L, L]},
      "model": {"kind": "total", "alpha": 0.1, "lambda_max": 2.0},
      "cost": {"kind": "damping", "weight": 0.0987, "observation_region": [[...]],
               "tv_weight": 0.0, "reference": null},
      "control": {"design_region": [[...]], "initial_q": {"type": "constant", "value": 0.0}},
      "optimizer": {"max_iter": 500, "grad_tol": null, "memory": 10},
      "seed": 0,
      "output_dir": "out"
    }

``mesh.domain`` may be null, meaning ``[0, L]^2`` with ``L = 10 pi / k0``.
A q source (``initial_q``, ``cost.reference``) is one of
``{"type": "constant", "value": c}``, ``{"type": "two_gaussian", "tau": t, "L": L}``
or ``{"type": "csv", "path": p}``; a tracking reference is the state solved
from its q source on the same mesh.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .errors import ConfigError
from .fem import AdmissibleBox, P0Field, read_p0_csv
from .helmholtz import HelmholtzModel, PhysicalParams, solve
from .mesh import Mesh, build_structured_mesh, locate_region_elements
from .optim import ControlSpec, CostSpec, make_reference_bathymetry

SCHEMA_VERSION = 1
COMMANDS = ("solve", "optimize", "convergence", "gradcheck", "diagnostics")
SCALES = {"paper": 64, "desk": 32}

# upper bound on q; the experiments only state the floor q >= -0.9
DEFAULT_LAMBDA_MAX = 2.0
DEFAULT_ALPHA = 0.1


@dataclass
class RunConfig:
    command: str = "solve"
    physical: dict = field(default_factory=lambda: {"T0": 20.0, "g": 9.81, "z0": 3.0, "direction": [0.0, 1.0]})
    mesh: dict = field(default_factory=lambda: {"nx": 32, "ny": 32, "domain": None})
    model: dict = field(default_factory=lambda: {"kind": "total", "alpha": DEFAULT_ALPHA, "lambda_max": DEFAULT_LAMBDA_MAX})
    cost: Optional[dict] = None
    control: Optional[dict] = None
    optimizer: dict = field(default_factory=lambda: {"max_iter": 500, "grad_tol": None, "memory": 10})
    seed: int = 0
    output_dir: str = "out"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"command must be one of {COMMANDS}, got {self.command!r}")

    # -- physical quantities -------------------------------------------------
    @property
    def physical_params(self) -> PhysicalParams:
        p = self.physical
        try:
            return PhysicalParams(
                T0=float(p["T0"]),
                g_grav=float(p["g"]),
                z0=float(p["z0"]),
                direction=tuple(p.get("direction", (0.0, 1.0))),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad physical section: {exc}") from exc

    @property
    def L(self) -> float:
        return self.physical_params.L

    @property
    def domain(self) -> tuple[float, float, float, float]:
        d = self.mesh.get("domain")
        if d is None:
            return (0.0, 0.0, self.L, self.L)
        return tuple(float(v) for v in d)

    def with_mesh(self, nx: int, ny: Optional[int] = None) -> "RunConfig":
        cfg = copy.deepcopy(self)
        cfg.mesh["nx"] = int(nx)
        cfg.mesh["ny"] = int(nx if ny is None else ny)
        return cfg

    # -- serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        rec = {
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "physical": self.physical,
            "L": self.L,
            "mesh": self.mesh,
            "model": self.model,
            "cost": self.cost,
            "control": self.control,
            "optimizer": self.optimizer,
            "seed": self.seed,
            "output_dir": self.output_dir,
        }
        rec.update(self.extra)
        return copy.deepcopy(rec)

    @classmethod
    def from_dict(cls, rec: dict) -> "RunConfig":
        rec = copy.deepcopy(rec)
        version = rec.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        rec.pop("L", None)
        known = {"command", "physical", "mesh", "model", "cost", "control", "optimizer", "seed", "output_dir"}
        extra = {k: rec.pop(k) for k in list(rec) if k not in known}
        cfg = cls(**rec, extra=extra)
        cfg.validate()
        return cfg

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                rec = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(rec)

    def validate(self) -> None:
        x0, y0, x1, y1 = self.domain

        def inside(rects, what):
            for r in rects or []:
                if len(r) != 4 or r[0] < x0 or r[1] < y0 or r[2] > x1 or r[3] > y1 or r[2] < r[0] or r[3] < r[1]:
                    raise ConfigError(f"{what} rectangle {r} is not inside the domain {self.domain}")

        if self.cost:
            inside(self.cost.get("observation_region"), "observation")
        if self.control:
            inside(self.control.get("design_region"), "design")
        self.physical_params


def preset_damping(scale: str = "desk") -> RunConfig:
    """Wave damping: damp on [L/6, 5L/6]^2 by optimizing q on [L/4, 3L/4]^2."""
    nx = _scale_nx(scale)
    cfg = RunConfig(command="optimize")
    L = cfg.L
    cfg.mesh = {"nx": nx, "ny": nx, "domain": [0.0, 0.0, L, L]}
    omega0 = cfg.physical_params.omega0
    cfg.cost = {
        "kind": "damping",
        "weight": omega0**2,
        "observation_region": [[L / 6, L / 6, 5 * L / 6, 5 * L / 6]],
        "tv_weight": 0.0,
        "reference": None,
    }
    cfg.control = {
        "design_region": [[L / 4, L / 4, 3 * L / 4, 3 * L / 4]],
        "initial_q": {"type": "constant", "value": 0.0},
    }
    cfg.output_dir = f"out/damping-{scale}"
    cfg.extra = {"preset": "damping", "scale": scale, "box_floor": DEFAULT_ALPHA - 1.0}
    return cfg


def preset_inverse(scale: str = "desk", tau: float = 1e-3) -> RunConfig:
    """Inverse problem: recover two Gaussian bumps from waves observed around (3L/4, 3L/4)."""
    nx = _scale_nx(scale)
    cfg = RunConfig(command="optimize")
    L = cfg.L
    delta = L / 6
    cfg.mesh = {"nx": nx, "ny": nx, "domain": [0.0, 0.0, L, L]}
    omega0 = cfg.physical_params.omega0
    cfg.cost = {
        "kind": "tracking",
        "weight": omega0**2,
        "observation_region": [[3 * L / 4 - delta, 3 * L / 4 - delta, 3 * L / 4 + delta, 3 * L / 4 + delta]],
        "tv_weight": 0.0,
        "reference": {"type": "two_gaussian", "tau": tau, "L": L},
    }
    cfg.control = {
        "design_region": [
            [L / 8, L / 8, 3 * L / 8, 3 * L / 8],
            [5 * L / 8, 5 * L / 8, 7 * L / 8, 7 * L / 8],
        ],
        "initial_q": {"type": "constant", "value": 0.0},
    }
    cfg.output_dir = f"out/inverse-{scale}"
    cfg.extra = {
        "preset": "inverse",
        "scale": scale,
        "box_floor": DEFAULT_ALPHA - 1.0,
        "notes": ["the design region is not contained in the observation region"],
    }
    return cfg


PRESETS = {"damping": preset_damping, "inverse": preset_inverse}


def _scale_nx(scale: str) -> int:
    try:
        return SCALES[scale]
    except KeyError:
        raise ConfigError(f"scale must be one of {sorted(SCALES)}, got {scale!r}") from None


# --------------------------------------------------------------------------
# building solver objects


@dataclass
class Problem:
    config: RunConfig
    mesh: Mesh
    model: HelmholtzModel
    cost: Optional[CostSpec]
    control: Optional[ControlSpec]
    q_reference: Optional[P0Field] = None


def q_from_source(mesh: Mesh, source: Optional[dict], base_dir: Any = ".") -> P0Field:
    if source is None:
        return P0Field.zeros(mesh)
    kind = source.get("type")
    if kind == "constant":
        return P0Field(mesh, np.full(mesh.n_triangles, float(source.get("value", 0.0))))
    if kind == "two_gaussian":
        return make_reference_bathymetry(mesh, float(source["tau"]), float(source["L"]))
    if kind == "csv":
        return read_p0_csv(mesh, Path(base_dir) / source["path"])
    raise ConfigError(f"unknown q source type {kind!r}")


def build_problem(cfg: RunConfig, base_dir: Any = ".") -> Problem:
    phys = cfg.physical_params
    mesh = build_structured_mesh(cfg.domain, cfg.mesh["nx"], cfg.mesh.get("ny", cfg.mesh["nx"]))
    m = cfg.model
    box = AdmissibleBox(alpha=float(m.get("alpha", DEFAULT_ALPHA)), lambda_max=float(m.get("lambda_max", DEFAULT_LAMBDA_MAX)), kappa=m.get("kappa"))
    model = HelmholtzModel(mesh, phys.k0, m.get("kind", "total"), box, phys.direction)

    cost = control = q_ref = None
    if cfg.control:
        q0 = q_from_source(mesh, cfg.control.get("initial_q"), base_dir)
        design = locate_region_elements(mesh, cfg.control["design_region"])
        masked = np.zeros(mesh.n_triangles)
        masked[design] = q0.values[design]
        control = ControlSpec(cfg.control["design_region"], box, P0Field(mesh, masked))
    if cfg.cost:
        c = cfg.cost
        reference = None
        if c["kind"] == "tracking":
            q_ref = q_from_source(mesh, c.get("reference"), base_dir)
            reference = model.observed(solve(model, q_ref).state)
        cost = CostSpec(
            kind=c["kind"],
            weight=float(c.get("weight", phys.omega0**2)),
            observation_region=c["observation_region"],
            reference=reference,
            tv_weight=float(c.get("tv_weight", 0.0)),
        )
    return Problem(cfg, mesh, model, cost, control, q_ref)
