"""Scenario files: a TOML description of one experiment.

A scenario names a mesh, the number of time steps, initial and target
densities, the terminal cost, one or more interaction-cost variants (each
variant is solved separately) and solver/output settings.  Unknown keys are
rejected.  The schema is documented in the README.
"""
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import tomli
import tomli_w
from pydantic import (BaseModel, ConfigDict, Field, NonNegativeFloat,
                      PositiveFloat, PositiveInt, ValidationError,
                      field_validator, model_validator)


class ScenarioError(ValueError):
    """Scenario failed to parse or validate; ``errors`` lists field-level messages."""

    def __init__(self, errors, source=None):
        self.errors = list(errors)
        self.source = source
        head = f"{source}: " if source else ""
        super().__init__(head + "; ".join(self.errors))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class BoxMask(_Strict):
    type: Literal["box"]
    min: list[float]
    max: list[float]

    @model_validator(mode="after")
    def _dims(self):
        if len(self.min) != len(self.max) or len(self.min) not in (2, 3):
            raise ValueError("box min/max need 2 or 3 matching coordinates")
        return self


class BallMask(_Strict):
    type: Literal["ball"]
    center: list[float]
    radius: PositiveFloat


class LongitudeMask(_Strict):
    """Band of longitudes in degrees (east positive), measured as atan2(y, x)."""

    type: Literal["longitude"]
    min_deg: float
    max_deg: float


class VertexMask(_Strict):
    type: Literal["vertices"]
    indices: list[int]


Mask = Annotated[Union[BoxMask, BallMask, LongitudeMask, VertexMask], Field(discriminator="type")]


class MeshSpec(_Strict):
    generator: Optional[Literal["icosphere", "flat_grid"]] = None
    path: Optional[str] = None
    subdivisions: Annotated[int, Field(ge=0, le=7)] = 2
    radius: PositiveFloat = 1.0
    nx: PositiveInt = 10
    ny: PositiveInt = 10
    width: PositiveFloat = 1.0
    height: PositiveFloat = 1.0
    holes: list[Mask] = []
    metric: Literal["graph", "sphere", "euclidean"] = "graph"

    @model_validator(mode="after")
    def _source(self):
        if (self.generator is None) == (self.path is None):
            raise ValueError("give exactly one of 'generator' or 'path'")
        if self.holes and self.generator != "flat_grid":
            raise ValueError("'holes' only applies to the flat_grid generator")
        return self


class BumpSpec(_Strict):
    center: Optional[list[float]] = None
    vertex: Optional[Annotated[int, Field(ge=0)]] = None
    sigma: PositiveFloat
    weight: PositiveFloat = 1.0

    @model_validator(mode="after")
    def _where(self):
        if (self.center is None) == (self.vertex is None):
            raise ValueError("give exactly one of 'center' or 'vertex'")
        if self.center is not None and len(self.center) not in (2, 3):
            raise ValueError("center needs 2 or 3 coordinates")
        return self


class DensitySpec(_Strict):
    bumps: list[BumpSpec] = []
    file: Optional[str] = None
    background: Annotated[float, Field(ge=0.0, lt=1.0)] = 0.0

    @model_validator(mode="after")
    def _source(self):
        if bool(self.bumps) == (self.file is not None):
            raise ValueError("give either 'bumps' or 'file'")
        return self


class TerminalSpec(_Strict):
    type: Literal["quadratic", "kl", "obstacle_region"]
    weight: NonNegativeFloat
    region: list[Mask] = []

    @model_validator(mode="after")
    def _region(self):
        if self.type == "obstacle_region" and not self.region:
            raise ValueError("obstacle_region terminal needs a 'region'")
        return self


class InteractionSpec(_Strict):
    name: str
    type: Literal["vanilla", "obstacle", "entropy", "congestion", "nonlocal", "dirichlet"]
    weight: NonNegativeFloat = 0.0
    region: list[Mask] = []
    eps: PositiveFloat = 1e-4
    mu: PositiveFloat = 1.0
    sigma: Optional[PositiveFloat] = None

    @model_validator(mode="after")
    def _params(self):
        if self.type == "obstacle" and not self.region:
            raise ValueError("obstacle interaction needs a 'region'")
        if self.type == "nonlocal" and self.sigma is None:
            raise ValueError("nonlocal interaction needs 'sigma'")
        return self


class SolverSpec(_Strict):
    iterations: PositiveInt = 500
    eta: PositiveFloat = 0.01
    line_search: bool = False
    tolerance: Optional[PositiveFloat] = None
    kkt_every: PositiveInt = 50
    log_every: Annotated[int, Field(ge=0)] = 0
    deterministic: bool = True


class OutputSpec(_Strict):
    directory: Optional[str] = None
    format: Literal["csv", "vtk"] = "csv"
    snapshots: bool = True


class Scenario(_Strict):
    name: str
    description: str = ""
    steps: PositiveInt
    averaging: Literal["arithmetic", "geometric", "harmonic"] = "arithmetic"
    mesh: MeshSpec
    initial: DensitySpec
    target: Optional[DensitySpec] = None
    terminal: TerminalSpec
    interactions: list[InteractionSpec]
    report_interaction: Optional[str] = None
    solver: SolverSpec = SolverSpec()
    output: OutputSpec = OutputSpec()

    @field_validator("interactions")
    @classmethod
    def _unique(cls, v):
        if not v:
            raise ValueError("at least one interaction variant is required")
        names = [x.name for x in v]
        if len(set(names)) != len(names):
            raise ValueError("interaction names must be unique")
        return v

    @model_validator(mode="after")
    def _cross(self):
        if self.terminal.type in ("quadratic", "kl") and self.target is None:
            raise ValueError(f"{self.terminal.type} terminal cost needs a [target] density")
        if self.report_interaction is not None:
            if self.report_interaction not in [x.name for x in self.interactions]:
                raise ValueError(f"report_interaction {self.report_interaction!r} is not a variant name")
        return self

    @property
    def reported_interaction(self):
        """Variant whose functional fills the interaction column of the cost table."""
        if self.report_interaction is not None:
            return next(x for x in self.interactions if x.name == self.report_interaction)
        others = [x for x in self.interactions if x.type != "vanilla"]
        return others[-1] if others else self.interactions[0]


def _format_errors(exc):
    out = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"] if not isinstance(p, str) or not p[0].isupper())
        out.append(f"{loc or '<root>'}: {err['msg']}")
    return out


def parse_scenario(data, source=None):
    """Validate a scenario mapping; raises :class:`ScenarioError`."""
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        raise ScenarioError(_format_errors(exc), source) from None


def loads(text, source=None):
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ScenarioError([f"TOML syntax: {exc}"], source) from None
    return parse_scenario(data, source)


def load_scenario(path):
    path = Path(path)
    scenario = loads(path.read_text(), source=str(path))
    return scenario, path.parent


def dumps(scenario):
    return tomli_w.dumps(scenario.model_dump(mode="json", exclude_none=True))


def dump_scenario(scenario, path):
    Path(path).write_text(dumps(scenario))
