import hashlib
import json
import math
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings

from src.services.errors import ConfigError


class Settings(BaseSettings):
    # App Settings
    APP_NAME: str = "polyrelax"
    LOG_LEVEL: str = "INFO"
    LOG_JSON: bool = False

    # Paths
    OUTPUT_DIR: str = os.path.join(os.getcwd(), "runs")

    # Execution
    THREADS: int = 1
    SEED: int = 0
    DETERMINISTIC_REDUCTION: bool = True  # fsum over cells; False switches to numpy pairwise sums

    # Legendre inversion
    NEWTON_TOL: float = 1e-11
    NEWTON_MAX_ITER: int = 100
    CACHE_SIZE: int = 256

    class Config:
        env_file = ".env"
        extra = "ignore"


settings = Settings()


class _Table(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelTable(_Table):
    family: Literal["quadratic", "polyquad", "gas-lagrangean"] = "quadratic"
    dim: Literal[2, 3] = 2
    params: dict[str, float | str] = Field(default_factory=dict)
    # declared constants; None means "use the family's own values"
    gamma_I: float | None = Field(default=None, gt=0)
    gamma_v: float | None = Field(default=None, gt=0)
    M: float | None = Field(default=None, gt=0)
    box_lower: list[float] | None = None
    box_upper: list[float] | None = None

    @model_validator(mode="after")
    def _box_pair(self):
        if (self.box_lower is None) != (self.box_upper is None):
            raise ValueError("box_lower and box_upper must be given together")
        if self.box_lower is not None:
            if len(self.box_lower) != len(self.box_upper):
                raise ValueError("box_lower and box_upper differ in length")
            if any(lo > hi for lo, hi in zip(self.box_lower, self.box_upper)):
                raise ValueError("box_lower must not exceed box_upper")
        return self


class GridTable(_Table):
    n_cells: int = Field(default=128, ge=8)
    x_min: float = 0.0
    x_max: float = 1.0

    @model_validator(mode="after")
    def _extent(self):
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        return self


class TimeTable(_Table):
    t_end: float = Field(default=0.2, ge=0)
    cfl: float = Field(default=0.4, gt=0, le=1)
    snapshot_stride: int = Field(default=10, ge=1)


class RelaxTable(_Table):
    epsilon: float = Field(default=0.05, gt=0)
    eps_list: list[float] = Field(default_factory=list)

    @field_validator("eps_list")
    @classmethod
    def _decreasing(cls, value: list[float]) -> list[float]:
        if any(e <= 0 or math.isnan(e) for e in value):
            raise ValueError("eps_list entries must be positive")
        if any(b >= a for a, b in zip(value, value[1:])):
            raise ValueError("eps_list must be strictly decreasing")
        return value


class InitTable(_Table):
    kind: Literal["rest", "sine", "shear", "mixed"] = "sine"
    amplitude: float = 0.05
    wavenumber: int = Field(default=1, ge=1)
    velocity_amplitude: float = 0.0
    prepared: bool = True
    tau_offset: float = 0.0


class OutputTable(_Table):
    directory: str = "runs/default"
    formats: list[Literal["csv", "json"]] = Field(default_factory=lambda: ["csv", "json"])


class NumericsTable(_Table):
    system: Literal["relax", "equilibrium", "augmented", "augmented-equilibrium"] = "relax"
    reconstruction: Literal["first-order", "muscl"] = "first-order"
    deterministic_reduction: bool = True
    w_min: float = Field(default=0.1, gt=0)
    rho_min: float = Field(default=1e-3, gt=0)
    refinement: int = Field(default=4, ge=2)
    blowup_factor: float = Field(default=50.0, gt=1)
    floor_factor: float = Field(default=3.0, ge=1)


class ChecksTable(_Table):
    n_samples: int = Field(default=512, ge=4)
    seed: int = Field(default=0, ge=0)


class ConvergeTable(_Table):
    slope_threshold: float = 0.8


class GasTable(_Table):
    family: Literal["polytropic-linear", "two-polytrope"] = "polytropic-linear"
    params: dict[str, float] = Field(default_factory=dict)
    rho_box: tuple[float, float] = (0.5, 2.0)
    amplitude: float = Field(default=0.05, ge=0)
    crosscheck_dim: Literal[2, 3] = 2

    @field_validator("rho_box")
    @classmethod
    def _ordered(cls, value: tuple[float, float]) -> tuple[float, float]:
        lo, hi = value
        if not 0 < lo < hi:
            raise ValueError("rho_box must satisfy 0 < rho_min < rho_max")
        return value


class RunConfig(_Table):
    """Typed view of a TOML run configuration."""

    model: ModelTable = Field(default_factory=ModelTable)
    grid: GridTable = Field(default_factory=GridTable)
    time: TimeTable = Field(default_factory=TimeTable)
    relax: RelaxTable = Field(default_factory=RelaxTable)
    init: InitTable = Field(default_factory=InitTable)
    output: OutputTable = Field(default_factory=OutputTable)
    numerics: NumericsTable = Field(default_factory=NumericsTable)
    checks: ChecksTable = Field(default_factory=ChecksTable)
    converge: ConvergeTable = Field(default_factory=ConvergeTable)
    gas: GasTable = Field(default_factory=GasTable)

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def content_hash(self) -> str:
        """git-style blob hash of the canonical JSON form."""
        payload = self.canonical_json().encode()
        return hashlib.sha1(b"blob %d\0" % len(payload) + payload).hexdigest()

    def with_overrides(self, **updates: dict) -> "RunConfig":
        """Return a validated copy with table-level updates, e.g. relax={"epsilon": 0.1}."""
        data = self.model_dump()
        for table, values in updates.items():
            data[table].update(values)
        return parse_run_config(data, source="<overrides>")


def _format_validation_error(err: ValidationError, source: str) -> str:
    lines = [f"{source}: invalid configuration"]
    for item in err.errors():
        field = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"  {field}: {item['msg']}")
    return "\n".join(lines)


def parse_run_config(data: dict, source: str = "<dict>") -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_format_validation_error(e, source)) from e


def load_run_config(path: str | Path) -> RunConfig:
    """Read and validate a TOML run configuration."""
    path = Path(path)
    try:
        with path.open("rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"{path}: no such config file") from e
    except tomllib.TOMLDecodeError as e:
        # message carries "(at line L, column C)"
        raise ConfigError(f"{path}: TOML syntax error: {e}") from e
    return parse_run_config(data, source=str(path))
