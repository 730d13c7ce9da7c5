"""Run configuration: a validated JSON document shared by every subcommand."""

from __future__ import annotations

import enum
import hashlib
import json
from fractions import Fraction
from pathlib import Path
from typing import Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import AbcError
from .scheduler import StageParams, derive_stage, parse_rational

Rational = Union[int, str]


class Mode(str, enum.Enum):
    STRICT = "STRICT"
    RELAXED = "RELAXED"


class Arithmetic(str, enum.Enum):
    FLOAT = "FLOAT"
    EXACT = "EXACT"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class StageSpec(_Strict):
    n: int = Field(ge=1)
    k: int = Field(ge=1)
    l: int = Field(ge=1)
    q: int = Field(ge=1)
    p: int
    sigma: Rational = "3/8"

    @field_validator("sigma")
    @classmethod
    def _sigma(cls, v):
        try:
            parse_rational(v)
        except (ValueError, ZeroDivisionError, AbcError) as exc:
            raise ValueError(f"not a rational: {v!r}") from exc
        return v


class Budgets(_Strict):
    """Sample counts per diagnostic."""

    area: int = Field(100_000, ge=1)
    commute: int = Field(100_000, ge=1)
    isometry_cells: int = Field(200, ge=1)
    isometry_samples: int = Field(100, ge=1)
    isometry_angles: int = Field(64, ge=1)
    jacobian: int = Field(10_000, ge=1)
    shiftlaw: int = Field(100_000, ge=1)
    distribute: int = Field(200_000, ge=1)
    mixing: int = Field(100_000, ge=1)
    orbit: int = Field(100, ge=1)


class Tolerances(_Strict):
    area: float = 1e-9
    commute: float = 1e-12
    isometry: float = 1e-9
    jacobian: float = 1e-5
    fd_step: float = 1e-5


class NormInputs(_Strict):
    """Estimates for the growth conditions of one stage (see ``abc params``)."""

    C_hat: Optional[Rational] = None
    H_norm: Optional[Rational] = None
    dH_prev: Optional[Rational] = None
    lip_prev: Optional[Rational] = None
    r: Optional[int] = None
    r_next: Optional[int] = None


class RunConfig(_Strict):
    """Validated run configuration.

    Defaults: RELAXED mode, FLOAT arithmetic, seed 0, output directory ``abc_out``,
    block-twist radii 0.42 and 0.48, mixing loss cap 0.2.
    """

    stages: list[StageSpec]
    mode: Mode = Mode.RELAXED
    float_or_exact: Arithmetic = Arithmetic.FLOAT
    samples: Budgets = Budgets()
    seed: int = Field(0, ge=0, lt=2**64)
    out: str = "abc_out"
    tolerances: Tolerances = Tolerances()
    r1: float = Field(0.42, gt=0, lt=0.5)
    r2: float = Field(0.48, gt=0, le=0.5)
    norms: dict[str, NormInputs] = {}
    mixing_cap: float = Field(0.2, gt=0, le=1)
    # HAT_ETA elements (u0, v0, j) for distribute/mixing; empty picks a default
    elements: list[tuple[int, int, int]] = []
    # squares (theta0, r0, side, fiber index) for mixing; empty picks a default
    squares: list[tuple[Rational, Rational, Rational, int]] = []
    orbit_start: tuple[float, float, float] = (0.33, 0.21, 0.1)
    degrees: list[int] = [16, 32, 64]

    def stage_params(self) -> list[StageParams]:
        strict = self.mode == Mode.STRICT
        return [derive_stage(s.n, s.k, s.l, s.q, s.p, s.sigma, strict=strict) for s in self.stages]

    def digest(self) -> str:
        text = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()


def _describe(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(x) for x in e["loc"]) or "<root>"
        parts.append(f"{loc}: {e['msg']}")
    return "; ".join(parts)


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse and validate; errors name the JSON line or the offending field."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AbcError("CONFIG", f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}")
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise AbcError("CONFIG", f"{source}: {_describe(exc)}")
    if not cfg.stages:
        raise AbcError("USAGE", f"{source}: stages list is empty")
    if cfg.r1 >= cfg.r2:
        raise AbcError("CONFIG", f"{source}: r1 must be smaller than r2")
    return cfg


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise AbcError("CONFIG", f"cannot read {p}: {exc.strerror}")
    return parse_config(text, str(p))


def norm_inputs(cfg: RunConfig) -> dict[int, dict]:
    """Norm estimates keyed by stage number, with rationals parsed."""
    out = {}
    for key, val in cfg.norms.items():
        try:
            n = int(key)
        except ValueError:
            raise AbcError("CONFIG", f"norms key {key!r} is not a stage number")
        d = {}
        for name, v in val.model_dump(exclude_none=True).items():
            d[name] = v if name in ("r", "r_next") else parse_rational(v)
        out[n] = d
    return out


def as_fraction(v: Rational) -> Fraction:
    return parse_rational(v)
