"""Strict JSON run configuration.

Defaults (anything not listed is required):

======================  ==============================  =========================
key                     default                         notes
======================  ==============================  =========================
model.eps               zeros(M)                        site energies
model.delta             1.0                             hopping
model.U                 0.0                             on-site interaction
model.periodic          false                           ring closure (M > 2)
numerics.n_p, n_q       64, 64                          grid size (M = 2 tasks)
numerics.dt             null                            null: largest stable step
numerics.t_final        1.0
numerics.beta_final     0.5
numerics.n_out          50                              output times (exact, ensemble)
numerics.samples        10000
numerics.seed           null                            required for stochastic tasks
numerics.cfl            0.5                             RK4 stability fraction
numerics.fd_step        1e-3                            oracle difference step
numerics.kind           "Q"                             Q | P | Liouville | classical
numerics.order          "full"                          full | first_order
numerics.x0             [1, 0, ...]                     reals or [re, im] pairs
numerics.n_values       [8, 16, 32, 64]                 verify-scaling sweep
numerics.UN             1.0                             verify-scaling coupling
numerics.tolerance      null                            null: task default
numerics.sweep          null                            {"parameter": str, "values": [...]}
output.directory        "out"
output.formats          ["csv", "json"]
======================  ==============================  =========================
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

from .errors import ConfigError
from .fock import HamiltonianParams

TASKS = ("exact", "pde", "ensemble", "thermo", "verify-residual", "verify-scaling", "verify-identity")
STOCHASTIC = ("ensemble", "verify-scaling", "verify-identity")
SWEEPABLE = ("t_final", "beta_final", "N", "U", "delta", "samples", "n_p")


@dataclass(frozen=True)
class ModelConfig:
    M: int
    N: int
    eps: tuple
    delta: float = 1.0
    U: float = 0.0
    periodic: bool = False

    def params(self) -> HamiltonianParams:
        return HamiltonianParams(tuple(self.eps), self.delta, self.U, self.periodic)


@dataclass(frozen=True)
class NumericsConfig:
    n_p: int = 64
    n_q: int = 64
    dt: float | None = None
    t_final: float = 1.0
    beta_final: float = 0.5
    n_out: int = 50
    samples: int = 10000
    seed: int | None = None
    cfl: float = 0.5
    fd_step: float = 1e-3
    kind: str = "Q"
    order: str = "full"
    x0: tuple | None = None
    n_values: tuple = (8, 16, 32, 64)
    UN: float = 1.0
    tolerance: float | None = None
    sweep: dict | None = None


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    formats: tuple = ("csv", "json")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    task: str
    numerics: NumericsConfig = field(default_factory=NumericsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"]["eps"] = list(self.model.eps)
        num = d["numerics"]
        num["n_values"] = list(self.numerics.n_values)
        if self.numerics.x0 is not None:
            num["x0"] = [list(v) for v in self.numerics.x0]
        d["output"]["formats"] = list(self.output.formats)
        return d

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def x0_complex(self):
        import numpy as np

        if self.numerics.x0 is None:
            x = np.zeros(self.model.M, dtype=complex)
            x[0] = 1
            return x
        x = np.array([complex(a, b) for a, b in self.numerics.x0])
        return x / np.linalg.norm(x)


class _Checker:
    def __init__(self):
        self.errors = []

    def section(self, doc, name, allowed, required=()):
        if not isinstance(doc, dict):
            self.errors.append(f"{name}: expected an object")
            return {}
        for k in doc:
            if k not in allowed:
                self.errors.append(f"{name}.{k}: unknown key")
        for k in required:
            if k not in doc:
                self.errors.append(f"{name}.{k}: required field missing")
        return doc

    def integer(self, doc, path, default=None, minimum=None):
        v = doc.get(path.split(".")[-1], default)
        if v is None:
            return None
        if isinstance(v, bool) or not isinstance(v, int):
            self.errors.append(f"{path}: expected an integer")
            return default
        if minimum is not None and v < minimum:
            self.errors.append(f"{path}: must be >= {minimum}")
        return v

    def number(self, doc, path, default=None, positive=False, nonnegative=False, nullable=False):
        v = doc.get(path.split(".")[-1], default)
        if v is None:
            if not nullable and default is not None:
                self.errors.append(f"{path}: must not be null")
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            self.errors.append(f"{path}: expected a finite number")
            return default
        if positive and v <= 0:
            self.errors.append(f"{path}: must be positive")
        if nonnegative and v < 0:
            self.errors.append(f"{path}: must be non-negative")
        return float(v)

    def choice(self, doc, path, options, default):
        v = doc.get(path.split(".")[-1], default)
        if v not in options:
            self.errors.append(f"{path}: must be one of {list(options)}")
            return default
        return v


def _parse_x0(chk, raw, M):
    if raw is None:
        return None
    if not isinstance(raw, list) or len(raw) != M:
        chk.errors.append(f"numerics.x0: expected a list of {M} amplitudes")
        return None
    out = []
    for i, v in enumerate(raw):
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            out.append((float(v), 0.0))
        elif (isinstance(v, list) and len(v) == 2
              and all(isinstance(a, (int, float)) and not isinstance(a, bool) for a in v)):
            out.append((float(v[0]), float(v[1])))
        else:
            chk.errors.append(f"numerics.x0[{i}]: expected a number or [re, im]")
            return None
    if sum(a * a + b * b for a, b in out) == 0:
        chk.errors.append("numerics.x0: must not be the zero vector")
        return None
    return tuple(out)


def from_dict(doc: dict) -> RunConfig:
    chk = _Checker()
    top = chk.section(doc, "config", ("model", "task", "numerics", "output"), ("model", "task"))
    m = chk.section(top.get("model", {}), "model", ("M", "N", "eps", "delta", "U", "periodic"), ("M", "N"))
    M = chk.integer(m, "model.M", minimum=2)
    N = chk.integer(m, "model.N", minimum=1)
    eps = m.get("eps")
    if eps is None:
        eps = [0.0] * (M or 0)
    elif (not isinstance(eps, list) or (isinstance(M, int) and len(eps) != M)
          or not all(isinstance(e, (int, float)) and not isinstance(e, bool) and math.isfinite(e) for e in eps)):
        chk.errors.append("model.eps: expected a list of M finite numbers")
        eps = [0.0] * (M or 0)
    delta = chk.number(m, "model.delta", 1.0)
    U = chk.number(m, "model.U", 0.0)
    periodic = m.get("periodic", False)
    if not isinstance(periodic, bool):
        chk.errors.append("model.periodic: expected true or false")
        periodic = False
    task = top.get("task")
    if "task" in top and task not in TASKS:
        chk.errors.append(f"task: must be one of {list(TASKS)}")

    n = chk.section(top.get("numerics", {}), "numerics", NumericsConfig.__dataclass_fields__)
    d = NumericsConfig()
    n_p = chk.integer(n, "numerics.n_p", d.n_p, minimum=8)
    n_q = chk.integer(n, "numerics.n_q", d.n_q, minimum=8)
    if isinstance(n_q, int) and n_q % 2:
        chk.errors.append("numerics.n_q: must be even")
    num = dict(
        n_p=n_p, n_q=n_q,
        dt=chk.number(n, "numerics.dt", None, positive=True, nullable=True),
        t_final=chk.number(n, "numerics.t_final", d.t_final),
        beta_final=chk.number(n, "numerics.beta_final", d.beta_final, nonnegative=True),
        n_out=chk.integer(n, "numerics.n_out", d.n_out, minimum=1),
        samples=chk.integer(n, "numerics.samples", d.samples, minimum=20),
        seed=chk.integer(n, "numerics.seed", None, minimum=0),
        cfl=chk.number(n, "numerics.cfl", d.cfl, positive=True),
        fd_step=chk.number(n, "numerics.fd_step", d.fd_step, positive=True),
        kind=chk.choice(n, "numerics.kind", ("Q", "P", "Liouville", "classical"), d.kind),
        order=chk.choice(n, "numerics.order", ("full", "first_order"), d.order),
        x0=_parse_x0(chk, n.get("x0"), M) if isinstance(M, int) else None,
        UN=chk.number(n, "numerics.UN", d.UN),
        tolerance=chk.number(n, "numerics.tolerance", None, positive=True, nullable=True),
    )
    nv = n.get("n_values", list(d.n_values))
    if (not isinstance(nv, list) or len(nv) < 2
            or not all(isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in nv)):
        chk.errors.append("numerics.n_values: expected a list of at least two positive integers")
        nv = list(d.n_values)
    num["n_values"] = tuple(nv)
    sweep = n.get("sweep")
    if sweep is not None:
        sw = chk.section(sweep, "numerics.sweep", ("parameter", "values"), ("parameter", "values"))
        if sw.get("parameter") not in SWEEPABLE:
            chk.errors.append(f"numerics.sweep.parameter: must be one of {list(SWEEPABLE)}")
        vals = sw.get("values")
        if (not isinstance(vals, list) or not vals
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals)):
            chk.errors.append("numerics.sweep.values: expected a non-empty list of numbers")
        sweep = {"parameter": sw.get("parameter"), "values": list(vals) if isinstance(vals, list) else []}
    num["sweep"] = sweep
    if task in STOCHASTIC and num["seed"] is None:
        chk.errors.append(f"numerics.seed: required for task {task}")
    if task in ("pde", "thermo", "verify-residual") and M not in (None, 2):
        chk.errors.append(f"model.M: task {task} runs on the two-site grid (M = 2)")
    if task == "pde" and num["kind"] == "classical":
        chk.errors.append("numerics.kind: pde accepts Q, P or Liouville")
    if task == "thermo" and num["kind"] == "Liouville":
        chk.errors.append("numerics.kind: thermo accepts Q, P or classical")

    o = chk.section(top.get("output", {}), "output", ("directory", "formats"))
    directory = o.get("directory", OutputConfig.directory)
    if not isinstance(directory, str) or not directory:
        chk.errors.append("output.directory: expected a non-empty string")
    formats = o.get("formats", list(OutputConfig.formats))
    if not isinstance(formats, list) or not set(formats) <= {"csv", "json"} or not formats:
        chk.errors.append("output.formats: expected a non-empty subset of ['csv', 'json']")
        formats = list(OutputConfig.formats)

    if chk.errors:
        raise ConfigError(chk.errors)
    model = ModelConfig(M, N, tuple(float(e) for e in eps), delta, U, periodic)
    try:
        model.params()
    except ValueError as exc:
        raise ConfigError([f"model: {exc}"]) from None
    return RunConfig(model, task, NumericsConfig(**num), OutputConfig(directory, tuple(formats)))


def parse_config(text: str) -> RunConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config: invalid JSON ({exc.msg} at line {exc.lineno})"]) from None
    return from_dict(doc)


def with_overrides(cfg: RunConfig, **changes) -> RunConfig:
    """Re-validate a config after replacing model or numerics fields."""
    d = cfg.to_dict()
    for key, value in changes.items():
        if key in d["model"]:
            d["model"][key] = value
        elif key in d["numerics"]:
            d["numerics"][key] = value
        elif key == "directory":
            d["output"]["directory"] = value
        else:
            raise KeyError(key)
    return from_dict(d)
