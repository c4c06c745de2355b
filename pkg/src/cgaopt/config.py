"""Problem description files: INI-style sections of ``key = value`` pairs.

Fixed sections are ``grid``, ``physics``, ``material``, ``network``,
``constraints``, ``run`` and ``output``. Boundary conditions come in named
sections: ``support.<name>``, ``load.<name>``, ``temperature.<name>`` and
``heat.<name>``, plus an optional ``body`` section. Every key is checked
against the schema below; unknown sections or keys are errors.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

from .constraints import BarrierSchedule
from .errors import InvalidConfig
from .field_net import MfnConfig
from .materials import LinearSingleMaterial, load_material_dataset
from .mesh import BoundaryConditions, Grid2D, RegionSpec, build_grid, select_nodes, tributary_weights
from .optimizer import Problem, RunConfig

REQUIRED = object()


def _positive(v):
    return v > 0


def _non_negative(v):
    return v >= 0


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_floats(n: int):
    def parse(text: str) -> tuple[float, ...]:
        parts = [p for p in text.replace(",", " ").split() if p]
        if len(parts) != n:
            raise ValueError(f"expected {n} numbers, got {len(parts)}")
        return tuple(float(p) for p in parts)
    parse.__name__ = f"{n} numbers"
    return parse


def _choice(*options):
    def parse(text: str) -> str:
        t = text.strip().lower()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return t
    parse.__name__ = "one of " + "|".join(options)
    return parse


def _period(text: str):
    t = text.strip().lower()
    if t in ("auto", "none"):
        return t
    vals = _parse_floats(2)(t)
    if any(v <= 0 for v in vals):
        raise ValueError("period entries must be positive")
    return vals


_period.__name__ = "auto|none|2 positive numbers"

# key -> (parser, default, check, description of the valid range)
SCHEMA = {
    "grid": {
        "nx": (int, 120, _positive, "> 0"),
        "ny": (int, 60, _positive, "> 0"),
        "lx": (float, 2.0, _positive, "> 0"),
        "ly": (float, 1.0, _positive, "> 0"),
    },
    "physics": {
        "nu": (float, 0.3, lambda v: -1 < v < 0.5, "in (-1, 0.5)"),
        "reference_temperature": (float, 0.0, None, ""),
        "solver": (_choice("direct", "cg"), "direct", None, ""),
        "stiffness_floor": (float, 1e-6, _non_negative, ">= 0"),
    },
    "material": {
        "kind": (_choice("linear", "rbf"), REQUIRED, None, ""),
        "dataset": (str, None, None, ""),
        "epsilon": (float, 1.0, _non_negative, ">= 0"),
        "E0": (float, 1.0, None, ""),
        "density0": (float, 1.0, None, ""),
        "kappa0": (float, 1.0, None, ""),
        "alpha0": (float, 0.0, None, ""),
    },
    "network": {
        "layers": (int, 3, _positive, "> 0"),
        "width": (int, 100, _positive, "> 0"),
        "bandwidth": (float, 5.0, _non_negative, ">= 0"),
        "bandwidth_x": (float, None, _non_negative, ">= 0"),
        "bandwidth_y": (float, None, _non_negative, ">= 0"),
        "components": (int, None, _positive, "> 0"),
        "seed": (int, 0, _non_negative, ">= 0"),
        "period": (_period, "auto", None, ""),
    },
    "constraints": {
        "mass": (float, REQUIRED, _positive, "> 0"),
        "lse_t": (float, 10.0, _positive, "> 0"),
        "tau0": (float, 3.0, _positive, "> 0"),
        "mu": (float, 1.04, lambda v: v >= 1, ">= 1"),
        "tau_max": (float, math.inf, _positive, "> 0"),
        "partition": (_choice("auto", "on", "off"), "auto", None, ""),
    },
    "run": {
        "mode": (_choice("neural", "baseline"), "neural", None, ""),
        "lr": (float, 1e-2, _non_negative, ">= 0"),
        "clip": (float, 1.0, _positive, "> 0"),
        "max_iter": (int, 500, _non_negative, ">= 0"),
        "tol": (float, 1e-3, _positive, "> 0"),
        "patience": (int, 1, _positive, "> 0"),
        "require_feasible": (_parse_bool, True, None, ""),
        "beta1": (float, 0.9, lambda v: 0 <= v < 1, "in [0, 1)"),
        "beta2": (float, 0.999, lambda v: 0 <= v < 1, "in [0, 1)"),
        "eps": (float, 1e-8, _positive, "> 0"),
        "deterministic": (_parse_bool, False, None, ""),
    },
    "output": {
        "dir": (str, "runs", None, ""),
    },
    "body": {
        "force": (_parse_floats(2), (0.0, 0.0), None, ""),
        "heat_source": (float, 0.0, None, ""),
    },
}

REGION = (_parse_floats(4), REQUIRED, None, "")
BC_SCHEMA = {
    "support": {"region": REGION, "axes": (_choice("x", "y", "xy"), "xy", None, ""),
                "value": (_parse_floats(2), (0.0, 0.0), None, "")},
    "load": {"region": REGION, "force": (_parse_floats(2), REQUIRED, None, ""),
             "distribute": (_choice("per_node", "total", "line"), "per_node", None, "")},
    "temperature": {"region": REGION, "value": (float, REQUIRED, None, "")},
    "heat": {"region": REGION, "value": (float, REQUIRED, None, ""),
             "distribute": (_choice("per_node", "total", "line"), "per_node", None, "")},
}


def _type_name(parser) -> str:
    return getattr(parser, "__name__", str(parser))


def _read_section(name: str, raw: dict, schema: dict) -> dict:
    out = {}
    for key in raw:
        if key not in schema:
            raise InvalidConfig(f"[{name}] unknown key {key!r}; allowed: {', '.join(sorted(schema))}")
    for key, (parser, default, check, rng) in schema.items():
        if key not in raw:
            if default is REQUIRED:
                raise InvalidConfig(f"[{name}] missing required key {key!r} ({_type_name(parser)})")
            out[key] = default
            continue
        try:
            value = parser(raw[key])
        except ValueError as exc:
            raise InvalidConfig(f"[{name}] {key} = {raw[key]!r}: expected {_type_name(parser)} ({exc})") from None
        if check is not None and not check(value):
            raise InvalidConfig(f"[{name}] {key} = {raw[key]!r}: must be {rng}")
        out[key] = value
    return out


@dataclass
class BoundarySpec:
    kind: str  # support | load | temperature | heat
    name: str
    values: dict


@dataclass
class ProblemConfig:
    grid: dict
    physics: dict
    material: dict
    network: dict
    constraints: dict
    run: dict
    output: dict
    body: dict
    boundaries: list[BoundarySpec] = field(default_factory=list)
    source: str = ""

    # -- builders ------------------------------------------------------------
    def build_grid(self) -> Grid2D:
        g = self.grid
        return build_grid(g["nx"], g["ny"], g["lx"], g["ly"])

    def build_material(self):
        m = self.material
        if m["kind"] == "linear":
            return LinearSingleMaterial(m["E0"], m["density0"], m["kappa0"], m["alpha0"])
        dataset = m["dataset"]
        if not dataset.startswith("builtin:") and self.source:
            path = Path(dataset)
            if not path.is_absolute():
                dataset = str(Path(self.source).parent / path)
        return load_material_dataset(dataset, m["epsilon"])

    def build_bcs(self, grid: Grid2D) -> BoundaryConditions:
        bcs = BoundaryConditions.empty(grid)
        for spec in self.boundaries:
            v = spec.values
            nodes = select_nodes(grid, RegionSpec(*v["region"]), warn=False)
            if nodes.size == 0:
                raise InvalidConfig(f"[{spec.kind}.{spec.name}] region {v['region']} selects no nodes")
            if spec.kind == "support":
                bcs.fix(nodes, v["axes"], v["value"])
            elif spec.kind == "temperature":
                bcs.fix_temperature(nodes, v["value"])
            else:
                weights = _weights(grid, nodes, v["distribute"])
                if spec.kind == "load":
                    bcs.add_force(nodes, v["force"], weights)
                else:
                    bcs.add_heat(nodes, v["value"], weights)
        bcs.body_force = tuple(self.body["force"])
        bcs.heat_source = self.body["heat_source"]
        return bcs

    def build_problem(self) -> Problem:
        grid = self.build_grid()
        c, p = self.constraints, self.physics
        partition = {"auto": None, "on": True, "off": False}[c["partition"]]
        schedule = BarrierSchedule(c["tau0"], c["mu"], max(c["tau_max"], c["tau0"]))
        return Problem(grid, self.build_bcs(grid), self.build_material(), m_star=c["mass"], lse_t=c["lse_t"],
                       schedule=schedule, partition=partition, nu=p["nu"], T0=p["reference_temperature"],
                       e_floor_rel=p["stiffness_floor"], solver=p["solver"])

    @property
    def bandwidth(self) -> tuple[float, float]:
        n = self.network
        bx = n["bandwidth"] if n["bandwidth_x"] is None else n["bandwidth_x"]
        by = n["bandwidth"] if n["bandwidth_y"] is None else n["bandwidth_y"]
        return (bx, by)

    def network_config(self, n_components: int, seed: int | None = None) -> MfnConfig:
        n = self.network
        if n["components"] is not None and n["components"] != n_components:
            raise InvalidConfig(f"[network] components = {n['components']} but the material has {n_components}")
        period = n["period"]
        if period == "auto":
            period = (4.0 * self.grid["lx"], 4.0 * self.grid["ly"])
        elif period == "none":
            period = None
        return MfnConfig(n["layers"], n["width"], n_components, self.bandwidth,
                         n["seed"] if seed is None else seed, period)

    def run_config(self, deterministic: bool | None = None) -> RunConfig:
        r = self.run
        return RunConfig(lr=r["lr"], clip=r["clip"], max_iter=r["max_iter"], tol=r["tol"], beta1=r["beta1"],
                         beta2=r["beta2"], eps=r["eps"],
                         deterministic=r["deterministic"] if deterministic is None else deterministic,
                         patience=r["patience"], require_feasible=r["require_feasible"])


def _weights(grid, nodes, mode):
    if mode == "per_node":
        return None
    if mode == "total":
        return [1.0 / nodes.size] * nodes.size
    return tributary_weights(grid, nodes)


def required_keys() -> list[str]:
    keys = [f"{s}.{k}" for s, sch in SCHEMA.items() for k, v in sch.items() if v[1] is REQUIRED]
    return keys + ["support.<name>", "load.<name>"]


def parse_config_text(text: str, source: str = "<string>") -> ProblemConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive (E0, ...)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise InvalidConfig(f"{source}: {exc}") from None
    if not cp.sections():
        raise InvalidConfig(f"{source}: empty configuration; required keys: {', '.join(required_keys())}")
    parsed = {}
    boundaries = []
    for sec in cp.sections():
        raw = dict(cp[sec])
        kind, dot, name = sec.partition(".")
        if dot:
            if kind not in BC_SCHEMA or not name:
                raise InvalidConfig(f"unknown section [{sec}]; boundary sections are "
                                    f"{', '.join(k + '.<name>' for k in BC_SCHEMA)}")
            boundaries.append(BoundarySpec(kind, name, _read_section(sec, raw, BC_SCHEMA[kind])))
        elif sec in SCHEMA:
            parsed[sec] = raw
        else:
            raise InvalidConfig(f"unknown section [{sec}]; allowed: {', '.join(SCHEMA)} and boundary sections")
    if "material" not in parsed or "constraints" not in parsed:
        missing = [k for k in required_keys() if k.split(".")[0] not in parsed]
        raise InvalidConfig(f"{source}: missing required keys: {', '.join(missing)}")
    values = {sec: _read_section(sec, parsed.get(sec, {}), sch) for sec, sch in SCHEMA.items()}
    kinds = {b.kind for b in boundaries}
    for needed in ("support", "load"):
        if needed not in kinds:
            raise InvalidConfig(f"{source}: at least one [{needed}.<name>] section is required")
    mat = values["material"]
    if mat["kind"] == "rbf" and not mat["dataset"]:
        raise InvalidConfig("[material] kind = rbf needs a 'dataset' (path or builtin:<name>)")
    return ProblemConfig(boundaries=boundaries, source=source, **values)


def parse_config(path) -> ProblemConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, str(path))
