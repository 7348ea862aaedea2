"""Instance and experiment config files (TOML).

Instance file::

    [mu]
    atoms = [[0.0], [1.0]]
    weights = [0.5, 0.5]
    [nu]
    atoms = [[0.0], [1.0]]
    weights = [0.5, 0.5]
    [cost]
    kind = "squared-euclidean"      # or p-norm / off-diagonal-indicator
    params = {}                     # e.g. {p = 1.0}
    # matrix = [[0, 1], [1, 0]]     # explicit-matrix instead of kind

Multimarginal instance files use ``[[measures]]`` tables and a nested-list
``[cost] tensor``. Experiment configs wrap an instance in ``[instance]``
(inline tables, ``path = "..."`` or ``generator = "..."``) and add
``[schedule]``, ``[family]``, ``[solver]``, ``[experiment]`` and
``[assertions]``.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import instances
from .lab import EpsSchedule
from .measures import CostKernel, CostMatrix, DiscreteMeasure, InstanceError, build_cost_matrix
from .multimarginal import MultiProblem
from .sinkhorn import SinkhornConfig

EXPERIMENT_KINDS = ("solve", "exact", "converge", "ldp", "example52", "mm")

KNOWN_ASSERTIONS = {
    "solve": {"audit", "duality_gap_max"},
    "exact": {"oracle", "certificate"},
    "converge": {"final_gap_to_S0_max", "final_L1_max", "entry_bound", "cold_start_max"},
    "ldp": {"final_gap_max", "single_cell_identity"},
    "example52": {"constant_half", "control_nonconstant"},
    "mm": {"final_gap_max", "residual_max"},
}


class ConfigError(ValueError):
    """Malformed config or instance file; the message names the section."""


def _load(path: Path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        # tomli messages carry "(at line L, column C)"
        raise ConfigError(f"{path.name}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None


def _section(doc: dict, name: str, required: bool = True) -> dict:
    value = doc.get(name)
    if value is None:
        if required:
            raise ConfigError(f"missing [{name}] section")
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"[{name}] must be a table")
    return value


def parse_measure(table: dict, where: str) -> DiscreteMeasure:
    try:
        atoms = np.asarray(table["atoms"], dtype=float)
        weights = np.asarray(table["weights"], dtype=float)
    except KeyError as exc:
        raise ConfigError(f"[{where}] missing key {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] atoms/weights must be numeric lists: {exc}") from None
    try:
        return DiscreteMeasure(atoms, weights)
    except InstanceError as exc:
        raise ConfigError(f"[{where}] {exc}") from None


def parse_kernel(table: dict, where: str = "cost") -> CostKernel:
    try:
        if "matrix" in table:
            return CostKernel.matrix(table["matrix"])
        if "kind" not in table:
            raise ConfigError(f"[{where}] needs either kind or matrix")
        return CostKernel(str(table["kind"]), dict(table.get("params", {})))
    except (InstanceError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[{where}] {exc}") from None


@dataclass
class Instance:
    mu: DiscreteMeasure
    nu: DiscreteMeasure
    cost: CostMatrix
    kernel: CostKernel | None = None

    def canonical(self) -> dict:
        return {
            "mu": {"atoms": self.mu.atoms.tolist(), "weights": self.mu.weights.tolist()},
            "nu": {"atoms": self.nu.atoms.tolist(), "weights": self.nu.weights.tolist()},
            "cost": self.cost.values.tolist(),
        }


def parse_instance(doc: dict) -> Instance:
    mu = parse_measure(_section(doc, "mu"), "mu")
    nu = parse_measure(_section(doc, "nu"), "nu")
    kernel = parse_kernel(_section(doc, "cost"))
    try:
        cost = build_cost_matrix(kernel, mu, nu)
    except InstanceError as exc:
        raise ConfigError(f"[cost] {exc}") from None
    return Instance(mu, nu, cost, kernel)


def parse_multi_instance(doc: dict) -> MultiProblem:
    tables = doc.get("measures")
    if not isinstance(tables, list) or len(tables) < 2:
        raise ConfigError("[[measures]] needs at least two entries")
    measures = [parse_measure(t, f"measures.{k}") for k, t in enumerate(tables)]
    cost = _section(doc, "cost")
    if "tensor" not in cost:
        raise ConfigError("[cost] needs a nested-list 'tensor'")
    try:
        return MultiProblem(measures, np.asarray(cost["tensor"], dtype=float))
    except (InstanceError, ValueError) as exc:
        raise ConfigError(f"[cost] {exc}") from None


def load_instance(path) -> Instance:
    return parse_instance(_load(Path(path)))


def git_hash(payload: bytes) -> str:
    """Git-style blob id of ``payload``."""
    return hashlib.sha1(b"blob %d\0" % len(payload) + payload).hexdigest()


def canonical_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


@dataclass
class RunConfig:
    kind: str
    raw: dict
    source: Path
    seed: int = 0
    instance: Instance | None = None
    multi: MultiProblem | None = None
    schedule: EpsSchedule | None = None
    solver: SinkhornConfig | None = None
    family: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)
    assertions: dict = field(default_factory=dict)
    warm_start: bool = True

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_bytes(self.raw)).hexdigest()

    def instance_hash(self) -> str:
        if self.multi is not None:
            obj = {
                "measures": [{"atoms": m.atoms.tolist(), "weights": m.weights.tolist()} for m in self.multi.measures],
                "tensor": self.multi.cost.tolist(),
            }
        else:
            obj = self.instance.canonical()
        return git_hash(canonical_bytes(obj))


def _generated_instance(table: dict, seed: int) -> Instance:
    gen = table.get("generator")
    try:
        if gen == "grid":
            mu, nu, C = instances.grid_instance(
                int(table["m"]), int(table.get("n", table["m"])), seed=seed,
                uniform=bool(table.get("uniform", False)), offset=float(table.get("offset", 0.0)),
            )
        elif gen == "random":
            mu, nu, C = instances.random_instance(seed, int(table["m"]), int(table.get("n", table["m"])), int(table.get("dim", 2)))
        elif gen == "assignment":
            mu, nu, C = instances.assignment_instance(seed, int(table["n"]))
        else:
            raise ConfigError(f"[instance] unknown generator {gen!r}")
    except KeyError as exc:
        raise ConfigError(f"[instance] generator {gen!r} needs key {exc.args[0]!r}") from None
    return Instance(mu, nu, C)


def _instance_from(section: dict, base: Path, seed: int, multi: bool):
    if "path" in section:
        doc = _load((base / section["path"]).resolve())
    elif "generator" in section:
        if multi:
            sizes = section.get("sizes")
            if not sizes:
                raise ConfigError("[instance] multimarginal generator needs 'sizes'")
            return instances.random_tensor_problem(seed, [int(s) for s in sizes], uniform=bool(section.get("uniform", False)))
        return _generated_instance(section, seed)
    else:
        doc = section
    return parse_multi_instance(doc) if multi else parse_instance(doc)


def parse_schedule(table: dict) -> EpsSchedule:
    try:
        return EpsSchedule(float(table["eps_start"]), float(table["eps_end"]), float(table.get("factor", 0.5)))
    except KeyError as exc:
        raise ConfigError(f"[schedule] missing key {exc.args[0]!r}") from None
    except InstanceError as exc:
        raise ConfigError(f"[schedule] {exc}") from None


def parse_solver(table: dict) -> SinkhornConfig:
    unknown = set(table) - {"epsilon", "tol", "max_iter", "gap_tol", "warm_start"}
    if unknown:
        raise ConfigError(f"[solver] unknown keys {sorted(unknown)}")
    try:
        return SinkhornConfig(
            epsilon=float(table.get("epsilon", 1.0)),
            tol=float(table.get("tol", 1e-10)),
            max_iter=int(table.get("max_iter", 100_000)),
            gap_tol=float(table.get("gap_tol", 1e-6)),
        )
    except InstanceError as exc:
        raise ConfigError(f"[solver] {exc}") from None


def load_config(path, kind: str | None = None, seed: int | None = None) -> RunConfig:
    """Parse an experiment config; ``kind`` (the CLI subcommand) must agree with ``[experiment] kind``."""
    path = Path(path)
    doc = _load(path)
    experiment = _section(doc, "experiment", required=False)
    declared = experiment.get("kind")
    if kind is None:
        kind = declared
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"[experiment] kind must be one of {EXPERIMENT_KINDS}, got {kind!r}")
    if declared is not None and declared != kind:
        raise ConfigError(f"[experiment] kind is {declared!r} but the command is {kind!r}")

    instance_table = _section(doc, "instance", required=kind != "example52")
    if seed is None:
        seed = int(instance_table.get("seed", 0))
    cfg = RunConfig(kind=kind, raw=doc, source=path, seed=seed, experiment=dict(experiment))
    if kind == "mm":
        cfg.multi = _instance_from(instance_table, path.parent, seed, multi=True)
    elif kind != "example52":
        cfg.instance = _instance_from(instance_table, path.parent, seed, multi=False)

    solver = _section(doc, "solver", required=False)
    cfg.solver = parse_solver(solver)
    cfg.warm_start = bool(solver.get("warm_start", True))
    if kind in ("converge", "ldp", "example52", "mm"):
        cfg.schedule = parse_schedule(_section(doc, "schedule"))
    cfg.family = dict(_section(doc, "family", required=False))
    if cfg.family.get("kind", "none") not in ("none", "additive", "custom"):
        raise ConfigError(f"[family] kind must be none, additive or custom, got {cfg.family.get('kind')!r}")

    assertions = dict(_section(doc, "assertions", required=False))
    unknown = set(assertions) - KNOWN_ASSERTIONS[kind]
    if unknown:
        raise ConfigError(f"[assertions] unknown for {kind}: {sorted(unknown)}")
    cfg.assertions = assertions
    if kind == "ldp" and not experiment.get("event"):
        raise ConfigError("[experiment] ldp needs a nonempty 'event' list of [i, j] cells")
    if kind == "example52" and "n" not in experiment:
        raise ConfigError("[experiment] example52 needs grid size 'n'")
    return cfg
