"""Experiment configuration (TOML) and construction of fields and perturbations from it."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import model
from .errors import ConfigError
from .model import PlanarField, SetValuedPerturbation


@dataclass(frozen=True)
class Tolerances:
    integration: float = 1e-10
    shooting: float = 1e-8
    section: float = 1e-10
    quadrature: float = 1e-8
    nondegeneracy: float = 1e-6


@dataclass(frozen=True)
class ExperimentConfig:
    system: dict
    perturbation: tuple
    cycle_seed: tuple
    ladder: tuple = (0.02, 0.01, 0.005, 0.0025)
    tolerances: Tolerances = field(default_factory=Tolerances)
    sigma: float = -1.0
    paper_literal: bool = False
    out: str = "out"
    seed: int = 0
    threads: int = 1
    monte_carlo: int = 2000
    expect_nondegenerate: Optional[bool] = None

    def __post_init__(self):
        lad = self.ladder
        if not lad or any(e <= 0 for e in lad) or any(a <= b for a, b in zip(lad, lad[1:])):
            raise ConfigError(f"eps ladder must be positive and strictly decreasing, got {list(lad)}")
        for k, v in asdict(self.tolerances).items():
            if not v > 0:
                raise ConfigError(f"tolerance {k} must be positive")
        if self.sigma not in (1.0, -1.0):
            raise ConfigError("sign convention sigma must be +1 or -1")
        if len(self.cycle_seed) != 2:
            raise ConfigError("cycle seed must be a 2-vector")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        name = self.system.get("field")
        if name not in model.FIELDS and name != "custom":
            raise ConfigError(f"unknown field {name!r}; choose from {sorted(model.FIELDS)} or 'custom'")
        for term in self.perturbation:
            if term.get("type") not in TERMS:
                raise ConfigError(f"unknown perturbation term {term.get('type')!r}; choose from {sorted(TERMS)}")

    def digest(self) -> str:
        """Hash of the experiment definition (execution settings out/threads excluded)."""
        d = self.as_dict()
        del d["out"], d["threads"]
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def as_dict(self) -> dict:
        d = asdict(self)
        d["perturbation"] = [dict(t) for t in self.perturbation]
        d["ladder"] = list(self.ladder)
        d["cycle_seed"] = list(self.cycle_seed)
        return d

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return ExperimentConfig(**d)


TERMS = {"forcing", "dry_friction", "bounded_disturbance"}


def _float_list(v, what):
    try:
        return tuple(float(x) for x in v)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what} must be a list of numbers") from exc


def parse_config(data: dict) -> ExperimentConfig:
    try:
        system = dict(data["system"])
    except (KeyError, TypeError) as exc:
        raise ConfigError("missing [system] table") from exc
    seed = _float_list(system.pop("seed", [1.0, 0.0]), "system.seed")
    expect = system.pop("expect_nondegenerate", None)
    pert = tuple(dict(t) for t in data.get("perturbation", []))
    ladder = _float_list(data.get("ladder", {}).get("eps", ExperimentConfig.ladder), "ladder.eps")
    try:
        tol = Tolerances(**{k: float(v) for k, v in data.get("tolerances", {}).items()})
    except TypeError as exc:
        raise ConfigError(f"unknown tolerance key: {exc}") from exc
    run = dict(data.get("run", {}))
    known = {"sigma", "paper_literal", "out", "seed", "threads", "monte_carlo"}
    if set(run) - known:
        raise ConfigError(f"unknown [run] keys: {sorted(set(run) - known)}")
    try:
        return ExperimentConfig(
            system=system, perturbation=pert, cycle_seed=seed, ladder=ladder, tolerances=tol,
            sigma=float(run.get("sigma", -1.0)), paper_literal=bool(run.get("paper_literal", False)),
            out=str(run.get("out", "out")), seed=int(run.get("seed", 0)), threads=int(run.get("threads", 1)),
            monte_carlo=int(run.get("monte_carlo", 2000)), expect_nondegenerate=expect,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return parse_config(data)


def _custom_field(desc: dict) -> PlanarField:
    import sympy as sp

    x1, x2 = sp.symbols("x1 x2")
    params = {k: v for k, v in desc.items() if k not in ("field", "f1", "f2", "symmetric", "hamiltonian")}
    try:
        exprs = [sp.sympify(desc[k], locals={"x1": x1, "x2": x2}).subs(params) for k in ("f1", "f2")]
    except (KeyError, sp.SympifyError) as exc:
        raise ConfigError(f"custom field needs sympy expressions f1, f2 in x1, x2: {exc}") from exc
    extra = (exprs[0].free_symbols | exprs[1].free_symbols) - {x1, x2}
    if extra:
        raise ConfigError(f"unbound symbols in custom field: {sorted(map(str, extra))}")
    jac = sp.Matrix(exprs).jacobian([x1, x2])
    f_num = sp.lambdify((x1, x2), exprs, "numpy")
    j_num = sp.lambdify((x1, x2), jac.tolist(), "numpy")

    def func(x):
        return np.array([model._full(x[0], v) for v in f_num(x[0], x[1])])

    def jacf(x):
        rows = j_num(x[0], x[1])
        return np.array([[model._full(x[0], v) for v in row] for row in rows])

    ham = None
    if "hamiltonian" in desc:
        h_num = sp.lambdify((x1, x2), sp.sympify(desc["hamiltonian"]).subs(params), "numpy")
        ham = lambda x: h_num(x[0], x[1])
    return PlanarField(func, jacf, ham, bool(desc.get("symmetric", False)), "custom", params)


def build_field(cfg: ExperimentConfig) -> PlanarField:
    desc = dict(cfg.system)
    name = desc.pop("field")
    if name == "custom":
        return _custom_field(dict(cfg.system))
    try:
        return model.FIELDS[name](**desc)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for field {name!r}: {exc}") from exc


def build_perturbation(cfg: ExperimentConfig, period: float) -> SetValuedPerturbation:
    """Perturbation with the cycle's period T."""
    terms = []
    for t in cfg.perturbation:
        kw = {k: v for k, v in t.items() if k != "type"}
        try:
            if t["type"] == "forcing":
                terms.append(model.forcing(period=period, **kw))
            else:
                terms.append(getattr(model, t["type"])(**kw))
        except TypeError as exc:
            raise ConfigError(f"bad parameters for term {t['type']!r}: {exc}") from exc
    return SetValuedPerturbation.from_terms(period, terms)
