from __future__ import annotations

from collections.abc import Mapping
from pathlib import Path
from typing import Any, Literal, Self

from dotenv import dotenv_values
from mm_std import get_dotenv
from pydantic import BaseModel, ConfigDict, Field, FiniteFloat, field_validator, model_validator

from dpm_cvqkd.channel import ChannelParams
from dpm_cvqkd.finite_size import DEFAULT_BLOCK_SIZES
from dpm_cvqkd.protocol_sim import SimConfig
from dpm_cvqkd.utils import distance_grid

type Command = Literal["asymptotic-sweep", "tolerable-noise", "finite-size-sweep", "simulate", "dpm-verify"]

OUT_DIR_ENV = "DPM_CVQKD_OUT_DIR"

# parameters recorded in each command's CSV metadata; execution-only options (out, workers, verbose) never are
COMMAND_PARAMETERS: dict[str, tuple[str, ...]] = {
    "asymptotic-sweep": ("v", "beta", "eps", "alpha_db_km", "dmin", "dmax", "dstep"),
    "tolerable-noise": ("v", "beta", "alpha_db_km", "dmin", "dmax", "dstep"),
    "finite-size-sweep": (
        "v",
        "beta",
        "eps",
        "alpha_db_km",
        "dmin",
        "dmax",
        "dstep",
        "block_sizes",
        "eps_smooth",
        "eps_pe",
        "eps_pa",
    ),
    "simulate": ("v", "beta", "eps", "alpha_db_km", "distance", "pulses", "seed", "gain"),
    "dpm-verify": ("trials", "seed", "samples", "inject_error"),
}


class RunConfig(BaseModel):
    """Merged parameters of one CLI run: defaults, then the --config file, then explicit flags."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    command: Command
    out: Path | None = None
    no_timestamp: bool = False
    workers: int = Field(default=1, ge=1)
    verbose: bool = False

    v: float = Field(default=20.0, gt=1)
    beta: float = Field(default=0.95, gt=0, le=1)
    eps: float = Field(default=0.001, ge=0)
    alpha_db_km: float = Field(default=0.2, gt=0)
    dmin: float = Field(default=0.0, ge=0)
    dmax: float = Field(default=20.0, ge=0)
    dstep: float = Field(default=0.1, gt=0)
    distance: float = Field(default=10.0, ge=0)

    block_sizes: list[int] = Field(default_factory=lambda: list(DEFAULT_BLOCK_SIZES))
    eps_smooth: float = Field(default=1e-10, gt=0, lt=1)
    eps_pe: float = Field(default=1e-10, gt=0, lt=1)
    eps_pa: float = Field(default=1e-10, gt=0, lt=1)
    self_check: bool = False
    emit_residuals: bool = False

    pulses: int = Field(default=10**6, gt=0)
    seed: int = 0
    gain: FiniteFloat | Literal["auto"] = "auto"
    emit_records: bool = False

    trials: int = Field(default=1000, gt=0)
    samples: int = Field(default=10**6, gt=0)
    inject_error: bool = False

    @field_validator("block_sizes", mode="before")
    @classmethod
    def parse_block_sizes(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [int(float(item)) for item in value.split(",") if item.strip()]
        return value

    @field_validator("block_sizes")
    @classmethod
    def check_block_sizes(cls, value: list[int]) -> list[int]:
        if not value or any(n <= 1 for n in value):
            raise ValueError("block sizes must be a non-empty list of integers > 1")
        return value

    @model_validator(mode="after")
    def check_grid(self) -> Self:
        if self.dmax < self.dmin:
            raise ValueError(f"dmax ({self.dmax}) < dmin ({self.dmin})")
        return self

    def channel_params(self) -> ChannelParams:
        return ChannelParams(
            total_distance_km=self.distance,
            attenuation_db_per_km=self.alpha_db_km,
            excess_noise=self.eps,
            modulation_variance=self.v,
            beta=self.beta,
        )

    def distances(self) -> list[float]:
        return distance_grid(self.dmin, self.dmax, self.dstep)

    def sim_config(self) -> SimConfig:
        return SimConfig.from_channel(self.channel_params(), num_pulses=self.pulses, seed=self.seed, gain_k=self.gain)

    def metadata(self) -> dict[str, object]:
        return {f"param.{name}": getattr(self, name) for name in COMMAND_PARAMETERS[self.command]}


def read_config_file(path: Path) -> dict[str, str]:
    """key=value lines, keys are flag names with '-' replaced by '_'."""
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return {key.replace("-", "_"): value for key, value in dotenv_values(path).items() if value is not None}


def load_run_config(command: str, flags: Mapping[str, Any], config_path: Path | None = None) -> RunConfig:
    values: dict[str, Any] = {}
    if config_path is not None:
        values.update(read_config_file(config_path))
    values.update(flags)
    values["command"] = command
    return RunConfig(**values)


def resolve_out_dir(cfg: RunConfig) -> Path:
    if cfg.out is not None:
        return cfg.out
    env_value = get_dotenv(OUT_DIR_ENV)
    return Path(env_value) if env_value else Path()
