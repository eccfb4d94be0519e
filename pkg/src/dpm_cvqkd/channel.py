"""Symmetric two-arm fiber channel under entangling-cloner attacks."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import scipy.optimize
from mm_std import Err, Ok, Result
from pydantic import BaseModel, ConfigDict, Field

from dpm_cvqkd.gaussian_info import (
    TwoModeCovariance,
    asymptotic_key_rate,
    holevo_bound,
    mutual_information,
    symplectic_eigenvalues,
)
from dpm_cvqkd.types import Distances
from dpm_cvqkd.utils import parallel_map

logger = logging.getLogger(__name__)

ROOT_TOL = 1e-12
EPS_BRACKET_START = 1.0
EPS_BRACKET_MAX = 100.0


class ChannelParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    total_distance_km: float = Field(default=0.0, ge=0)  # Alice to Bob, each arm is half
    attenuation_db_per_km: float = Field(default=0.2, gt=0)
    excess_noise: float = Field(default=0.001, ge=0)  # referred to the channel input
    modulation_variance: float = Field(default=20.0, gt=1)  # total variance V
    beta: float = Field(default=0.95, gt=0, le=1)

    @property
    def arm_km(self) -> float:
        return self.total_distance_km / 2

    @property
    def transmittance(self) -> float:
        return transmittance_from_distance(self.arm_km, self.attenuation_db_per_km)

    @property
    def link_transmittance(self) -> float:
        """Alice to Bob through both arms, T1·T2."""
        return self.transmittance**2

    def at_distance(self, total_distance_km: float) -> ChannelParams:
        return self.model_copy(update={"total_distance_km": total_distance_km})

    def with_excess_noise(self, excess_noise: float) -> ChannelParams:
        return self.model_copy(update={"excess_noise": excess_noise})


@dataclass(frozen=True)
class ClonerNoise:
    w1: float
    w2: float


@dataclass(frozen=True)
class RatePoint:
    distance_km: float
    transmittance: float
    cov: TwoModeCovariance
    mutual_info: float
    holevo: float
    key_rate: float


def transmittance_from_distance(arm_km: float, alpha_db_per_km: float) -> float:
    if arm_km < 0:
        raise ValueError(f"transmittance_from_distance: arm_km must be >= 0, got {arm_km}")
    if alpha_db_per_km <= 0:
        raise ValueError(f"transmittance_from_distance: alpha must be > 0, got {alpha_db_per_km}")
    return float(10 ** (-alpha_db_per_km * arm_km / 10))


def cloner_variance(t: float, eps: float) -> float:
    """EPR ancilla variance W = 1 + Tε/(1-T). Singular at T = 1, see added_noise_variance."""
    if not 0 < t < 1:
        raise ValueError(f"cloner_variance: transmittance must be in (0, 1), got {t}")
    if eps < 0:
        raise ValueError(f"cloner_variance: excess noise must be >= 0, got {eps}")
    return 1 + t * eps / (1 - t)


def added_noise_variance(t: float, eps: float) -> float:
    """(1-T)·W = (1-T) + Tε; finite at T = 1."""
    if not 0 < t <= 1:
        raise ValueError(f"added_noise_variance: transmittance must be in (0, 1], got {t}")
    if eps < 0:
        raise ValueError(f"added_noise_variance: excess noise must be >= 0, got {eps}")
    return (1 - t) + t * eps


def cloner_noise(p: ChannelParams) -> ClonerNoise:
    t = p.transmittance
    w = cloner_variance(t, p.excess_noise)
    return ClonerNoise(w1=w, w2=w)


def entangling_cloner_covariance(t1: float, t2: float, eps: float, v: float) -> TwoModeCovariance:
    """EPR pair of variance V sent through arms T1 and T2; physical for any T1, T2 in (0, 1] and ε >= 0.

    Unequal modulation variances have no EPR source of this form, so callers pool V_A and V_B first.
    """
    if v < 1:
        raise ValueError(f"entangling_cloner_covariance: v must be >= 1, got {v}")
    a = t1 * v + added_noise_variance(t1, eps)
    b = t2 * v + added_noise_variance(t2, eps)
    c = math.sqrt(t1 * t2 * (v * v - 1))
    return TwoModeCovariance(a=a, b=b, c=c)


def build_covariance(p: ChannelParams) -> TwoModeCovariance:
    t = p.transmittance
    v = p.modulation_variance
    cov = entangling_cloner_covariance(t, t, p.excess_noise, v)
    try:
        symplectic_eigenvalues(cov)
    except ValueError as e:
        raise ValueError(f"build_covariance: inconsistent covariance for {p}") from e
    return cov


def asymptotic_rate(p: ChannelParams) -> float:
    return asymptotic_key_rate(build_covariance(p), p.beta)


def _check_sorted(distances: Distances) -> None:
    if any(b < a for a, b in zip(distances, distances[1:], strict=False)):
        raise ValueError("distances must be sorted ascending")


def rate_point(p: ChannelParams) -> RatePoint:
    cov = build_covariance(p)
    mi = mutual_information(cov)
    chi = holevo_bound(cov)
    return RatePoint(
        distance_km=p.total_distance_km,
        transmittance=p.transmittance,
        cov=cov,
        mutual_info=mi,
        holevo=chi,
        key_rate=p.beta * mi - chi,
    )


def rate_vs_distance(p: ChannelParams, distances_km: Distances, workers: int = 1) -> list[RatePoint]:
    _check_sorted(distances_km)
    return parallel_map(lambda d: rate_point(p.at_distance(d)), distances_km, workers)


def tolerable_excess_noise(p: ChannelParams, distance_km: float) -> Result[float]:
    """Largest ε with a non-negative asymptotic rate at distance_km, Brent's method on a doubled bracket.

    data holds the root residual K(ε*) and the upper end of the bracket.
    """
    base = p.at_distance(distance_km)

    def rate(eps: float) -> float:
        return asymptotic_rate(base.with_excess_noise(eps))

    if rate(0.0) <= 0:
        return Err("no_positive_rate", data={"distance_km": distance_km})

    hi = EPS_BRACKET_START
    while rate(hi) >= 0:
        hi *= 2
        if hi > EPS_BRACKET_MAX:
            return Err("bracket_expansion_failed", data={"distance_km": distance_km, "eps_hi": hi})

    try:
        eps_star = float(scipy.optimize.brentq(rate, 0.0, hi, xtol=ROOT_TOL))
    except (ValueError, RuntimeError) as e:
        return Err(f"root_not_converged: {e}", data={"distance_km": distance_km, "eps_hi": hi})
    return Ok(eps_star, data={"residual": rate(eps_star), "bracket_hi": hi})


def tolerable_noise_vs_distance(
    p: ChannelParams,
    distances_km: Distances,
    workers: int = 1,
) -> list[tuple[float, Result[float]]]:
    _check_sorted(distances_km)
    results = parallel_map(lambda d: tolerable_excess_noise(p, d), distances_km, workers)
    return list(zip(distances_km, results, strict=True))


def cutoff_distance(rows: list[tuple[float, float]]) -> float | None:
    """Last distance with a positive rate before the first non-positive one; None when the curve starts non-positive."""
    cutoff: float | None = None
    for distance, key_rate in rows:
        if key_rate <= 0:
            break
        cutoff = distance
    return cutoff
