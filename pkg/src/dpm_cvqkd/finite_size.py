"""Finite-size key rate with local estimation (n = N) or conventional sacrificed-sample estimation (n = N//2, m = N - n)."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Literal, Self

import scipy.optimize
import scipy.special
from pydantic import BaseModel, ConfigDict, Field, model_validator

from dpm_cvqkd.channel import ChannelParams, build_covariance, cutoff_distance
from dpm_cvqkd.gaussian_info import TwoModeCovariance, holevo_bound, mutual_information, symplectic_eigenvalues
from dpm_cvqkd.types import Distances, EstimationMode
from dpm_cvqkd.utils import parallel_map

logger = logging.getLogger(__name__)

MODES: tuple[EstimationMode, ...] = ("local_estimation", "conventional")
DEFAULT_BLOCK_SIZES = (10**4, 10**5, 10**6, 10**7, 10**8)
Z_SEARCH_MAX = 40.0


class FiniteSizeParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    block_size: int = Field(gt=0)  # N
    key_size: int = Field(gt=0)  # n
    eps_smooth: float = Field(default=1e-10, gt=0, lt=1)
    eps_pe: float = Field(default=1e-10, gt=0, lt=1)
    eps_pa: float = Field(default=1e-10, gt=0, lt=1)
    dim_h: Literal[2] = 2

    @model_validator(mode="after")
    def check_key_size(self) -> Self:
        if self.key_size > self.block_size:
            raise ValueError(f"key_size {self.key_size} exceeds block_size {self.block_size}")
        return self

    @property
    def sacrificed(self) -> int:
        """m = N - n, signals spent on parameter estimation."""
        return self.block_size - self.key_size

    @classmethod
    def for_mode(
        cls,
        block_size: int,
        mode: EstimationMode,
        eps_smooth: float = 1e-10,
        eps_pe: float = 1e-10,
        eps_pa: float = 1e-10,
    ) -> FiniteSizeParams:
        key_size = block_size if mode == "local_estimation" else block_size // 2
        return cls(block_size=block_size, key_size=key_size, eps_smooth=eps_smooth, eps_pe=eps_pe, eps_pa=eps_pa)


@dataclass(frozen=True)
class WorstCaseParams:
    t_min: float
    sigma2_max: float
    clamped: bool = False


@dataclass(frozen=True)
class FiniteSizeRow:
    block_size: int
    mode: EstimationMode
    distance_km: float
    key_rate: float


def privacy_amp_penalty(n: int, fsp: FiniteSizeParams) -> float:
    if n <= 0:
        raise ValueError(f"privacy_amp_penalty: n must be > 0, got {n}")
    return (2 * fsp.dim_h + 3) * math.sqrt(math.log2(2 / fsp.eps_smooth) / n) + (2 / n) * math.log2(1 / fsp.eps_pa)


def erf(x: float) -> float:
    return float(scipy.special.erf(x))


def confidence_coefficient(eps_pe: float) -> float:
    """z such that (1 - erf(z/√2))/2 = eps_pe/2, i.e. erfc(z/√2) = eps_pe."""
    if not 0 < eps_pe < 1:
        raise ValueError(f"confidence_coefficient: eps_pe must be in (0, 1), got {eps_pe}")

    def residual(z: float) -> float:
        return float(scipy.special.erfc(z / math.sqrt(2))) - eps_pe

    try:
        return float(scipy.optimize.brentq(residual, 0.0, Z_SEARCH_MAX, xtol=1e-13))
    except (ValueError, RuntimeError) as e:
        raise ValueError(f"confidence_coefficient: no convergence for eps_pe={eps_pe}") from e


def worst_case_params(eta: float, eps: float, m: int, x_mod: float, z: float) -> WorstCaseParams:
    if m <= 0:
        raise ValueError(f"worst_case_params: m must be > 0, got {m}")
    if x_mod <= 0:
        raise ValueError(f"worst_case_params: x_mod must be > 0, got {x_mod}")
    if not 0 < eta <= 1:
        raise ValueError(f"worst_case_params: eta must be in (0, 1], got {eta}")
    noise = 1 + eta * eps
    t_min = math.sqrt(eta) - z * math.sqrt(noise / (m * x_mod))
    sigma2_max = noise + z * math.sqrt(2) * noise / math.sqrt(m)
    clamped = t_min < 0
    if clamped:
        logger.debug("worst_case_params: t_min=%g clamped to 0 (m=%d)", t_min, m)
        t_min = 0.0
    return WorstCaseParams(t_min=t_min, sigma2_max=sigma2_max, clamped=clamped)


def worst_case_covariance(v: float, wc: WorstCaseParams) -> TwoModeCovariance:
    """EPR mode of variance V against Bob's mode after a channel with gain t_min and noise σ²_max.

    Bob's variance is t²(V - 1) + σ², the prepared variance V - 1 being what the channel scales.
    """
    t = wc.t_min
    cov = TwoModeCovariance(a=v, b=t * t * (v - 1) + wc.sigma2_max, c=t * math.sqrt(v * v - 1))
    symplectic_eigenvalues(cov)
    return cov


def finite_size_key_rate(p: ChannelParams, fsp: FiniteSizeParams, mode: EstimationMode) -> float:
    n_total = fsp.block_size
    if mode == "local_estimation":
        if fsp.key_size != n_total:
            raise ValueError(f"finite_size_key_rate: local estimation uses n = N, got n={fsp.key_size}, N={n_total}")
    elif mode == "conventional":
        if fsp.key_size != n_total // 2:
            raise ValueError(f"finite_size_key_rate: conventional mode uses n = N//2, got n={fsp.key_size}, N={n_total}")
    else:
        raise ValueError(f"finite_size_key_rate: unknown mode {mode!r}")

    cov = build_covariance(p)
    mi = mutual_information(cov)
    if mode == "local_estimation":
        s_pe = holevo_bound(cov)
    else:
        z = confidence_coefficient(fsp.eps_pe)
        v = p.modulation_variance
        # one-way estimate over the whole Alice-Bob link
        wc = worst_case_params(p.link_transmittance, p.excess_noise, fsp.sacrificed, v - 1, z)
        s_pe = holevo_bound(worst_case_covariance(v, wc))

    n = fsp.key_size
    return n / n_total * (p.beta * mi - s_pe - privacy_amp_penalty(n, fsp))


def finite_size_sweep(
    p: ChannelParams,
    block_sizes: Sequence[int] = DEFAULT_BLOCK_SIZES,
    distances_km: Distances = (),
    eps_smooth: float = 1e-10,
    eps_pe: float = 1e-10,
    eps_pa: float = 1e-10,
    workers: int = 1,
) -> list[FiniteSizeRow]:
    """Rows ordered by block size, then mode (local first), then distance."""
    if not block_sizes or not distances_km:
        raise ValueError("finite_size_sweep: block_sizes and distances must be non-empty")

    tasks = [(n_total, mode, d) for n_total in block_sizes for mode in MODES for d in distances_km]

    def evaluate(task: tuple[int, EstimationMode, float]) -> FiniteSizeRow:
        n_total, mode, d = task
        fsp = FiniteSizeParams.for_mode(n_total, mode, eps_smooth=eps_smooth, eps_pe=eps_pe, eps_pa=eps_pa)
        key_rate = finite_size_key_rate(p.at_distance(d), fsp, mode)
        return FiniteSizeRow(block_size=n_total, mode=mode, distance_km=d, key_rate=key_rate)

    return parallel_map(evaluate, tasks, workers)


def cutoff_by_curve(rows: Sequence[FiniteSizeRow]) -> dict[tuple[int, EstimationMode], float | None]:
    curves: dict[tuple[int, EstimationMode], list[tuple[float, float]]] = {}
    for row in rows:
        curves.setdefault((row.block_size, row.mode), []).append((row.distance_km, row.key_rate))
    return {key: cutoff_distance(sorted(points)) for key, points in curves.items()}


def _cutoff_key(cutoff: float | None) -> float:
    return -math.inf if cutoff is None else cutoff


def check_ordering(rows: Sequence[FiniteSizeRow]) -> list[str]:
    """Violations of the local-vs-conventional and block-size orderings, compared on delivered rates max(K, 0)."""
    violations: list[str] = []

    rates = {(r.block_size, r.mode, r.distance_km): max(r.key_rate, 0.0) for r in rows}
    for (n_total, mode, d), local_rate in rates.items():
        if mode != "local_estimation":
            continue
        conventional_rate = rates.get((n_total, "conventional", d))
        if conventional_rate is not None and local_rate < conventional_rate:
            violations.append(f"N={n_total} L={d}: local rate {local_rate:.6g} < conventional rate {conventional_rate:.6g}")

    cutoffs = cutoff_by_curve(rows)
    block_sizes = sorted({r.block_size for r in rows})
    for mode in MODES:
        previous = -math.inf
        for n_total in block_sizes:
            if (n_total, mode) not in cutoffs:
                continue
            current = _cutoff_key(cutoffs[(n_total, mode)])
            if current < previous:
                violations.append(f"{mode}: cutoff decreases at N={n_total} ({current} < {previous})")
            previous = max(previous, current)
    for n_total in block_sizes:
        local = cutoffs.get((n_total, "local_estimation"))
        conventional = cutoffs.get((n_total, "conventional"))
        if _cutoff_key(local) < _cutoff_key(conventional):
            violations.append(f"N={n_total}: local cutoff {local} < conventional cutoff {conventional}")
    return violations
