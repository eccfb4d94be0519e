"""Pulse-level Monte-Carlo run of the prepare-and-measure protocol and local estimation of Γ_XYZ.

Quadrature order everywhere: (x_A', p_A', x_B', p_B', x_Z, p_Z).
Bell measurement: x_Z = (x_A3 - x_B3)/√2, p_Z = (p_A3 + p_B3)/√2.
Displacement: x_A = x_A' - k·x_Z, p_A = p_A' - k·p_Z, x_B = x_B' + k·x_Z, p_B = p_B' - k·p_Z.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from collections.abc import Iterator
from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.optimize
from mm_std import Err, Ok, Result
from pydantic import BaseModel, ConfigDict, Field, FiniteFloat

from dpm_cvqkd.channel import ChannelParams, added_noise_variance, entangling_cloner_covariance
from dpm_cvqkd.gaussian_info import TwoModeCovariance, asymptotic_key_rate, symplectic_eigenvalues
from dpm_cvqkd.types import FloatArray
from dpm_cvqkd.utils import chunk_rng, chunk_sizes, parallel_map, relative_error

logger = logging.getLogger(__name__)

QUADRATURES = ("xa_p", "pa_p", "xb_p", "pb_p", "xz", "pz")
RECORD_FIELDS = (*QUADRATURES, "xa", "pa", "xb", "pb")

DEFAULT_CHUNK_SIZE = 1 << 16
MIN_RECORDS = 1000
MAX_TRANSMITTANCE_REL_SE = 0.01
GAIN_BOUNDS = (0.0, 4.0)
GAIN_SCAN_POINTS = 81
GAIN_XTOL = 1e-6
DEGENERATE_OBJECTIVE = 1e-12
CONVENTION_SIGMAS = 5.0
TRANSMITTANCE_FLOOR = 1e-12

SQRT2 = math.sqrt(2)


class SimConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    v_mod_a: float = Field(default=20.0, ge=1)  # total variance V_A, prepared data has V_A - 1
    v_mod_b: float = Field(default=20.0, ge=1)
    t1: float = Field(default=1.0, gt=0, le=1)
    t2: float = Field(default=1.0, gt=0, le=1)
    excess_noise: float = Field(default=0.001, ge=0)
    gain_k: FiniteFloat | Literal["auto"] = "auto"
    num_pulses: int = Field(default=10**6, gt=0)
    seed: int = 0
    chunk_size: int = Field(default=DEFAULT_CHUNK_SIZE, gt=0)

    @classmethod
    def from_channel(cls, p: ChannelParams, num_pulses: int, seed: int, gain_k: float | Literal["auto"] = "auto") -> SimConfig:
        t = p.transmittance
        v = p.modulation_variance
        return cls(
            v_mod_a=v,
            v_mod_b=v,
            t1=t,
            t2=t,
            excess_noise=p.excess_noise,
            gain_k=gain_k,
            num_pulses=num_pulses,
            seed=seed,
        )


@dataclass(frozen=True)
class RoundRecords:
    """A contiguous block of rounds; displaced keys stay None until displace_keys runs."""

    xa_p: FloatArray
    pa_p: FloatArray
    xb_p: FloatArray
    pb_p: FloatArray
    xz: FloatArray
    pz: FloatArray
    xa: FloatArray | None = None
    pa: FloatArray | None = None
    xb: FloatArray | None = None
    pb: FloatArray | None = None

    def __len__(self) -> int:
        return len(self.xz)

    def quadratures(self) -> FloatArray:
        """(n, 6) array in QUADRATURES order."""
        return np.column_stack([self.xa_p, self.pa_p, self.xb_p, self.pb_p, self.xz, self.pz])

    @property
    def displaced(self) -> bool:
        return self.xa is not None


@dataclass(frozen=True)
class TripartiteCovariance:
    x: FloatArray  # Alice's prepared data
    y: FloatArray  # Bob's prepared data
    z: FloatArray  # Charlie's outcomes
    c_xz: FloatArray
    c_yz: FloatArray
    count: int = 0

    def matrix(self) -> FloatArray:
        """6x6 Γ_XYZ; the X-Y block is zero (independent preparations)."""
        gamma = np.zeros((6, 6))
        gamma[0:2, 0:2] = self.x
        gamma[2:4, 2:4] = self.y
        gamma[4:6, 4:6] = self.z
        gamma[0:2, 4:6] = self.c_xz
        gamma[4:6, 0:2] = self.c_xz.T
        gamma[2:4, 4:6] = self.c_yz
        gamma[4:6, 2:4] = self.c_yz.T
        return gamma

    @classmethod
    def from_matrix(cls, gamma: FloatArray, count: int) -> TripartiteCovariance:
        return cls(
            x=gamma[0:2, 0:2].copy(),
            y=gamma[2:4, 2:4].copy(),
            z=gamma[4:6, 4:6].copy(),
            c_xz=gamma[0:2, 4:6].copy(),
            c_yz=gamma[2:4, 4:6].copy(),
            count=count,
        )


@dataclass(frozen=True)
class MomentAccumulator:
    count: int
    mean: FloatArray  # (6,)
    m2: FloatArray  # (6, 6) sum of centered outer products

    @classmethod
    def from_samples(cls, data: FloatArray) -> MomentAccumulator:
        mean = data.mean(axis=0)
        centered = data - mean
        return cls(count=len(data), mean=mean, m2=centered.T @ centered)

    def merge(self, other: MomentAccumulator) -> MomentAccumulator:
        """Chan et al. pairwise update."""
        if self.count == 0:
            return other
        if other.count == 0:
            return self
        count = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / count)
        m2 = self.m2 + other.m2 + np.outer(delta, delta) * (self.count * other.count / count)
        return MomentAccumulator(count=count, mean=mean, m2=m2)

    def covariance(self) -> FloatArray:
        if self.count < 2:
            raise ValueError(f"MomentAccumulator.covariance: need >= 2 samples, got {self.count}")
        return self.m2 / (self.count - 1)


@dataclass(frozen=True)
class ChannelEstimate:
    t1: float
    t2: float
    eps: float
    v_a: float  # total variance, prepared variance + 1
    v_b: float
    transmittance_rel_se: float
    clamped: bool


@dataclass(frozen=True)
class SimulationSummary:
    config: SimConfig
    beta: float
    empirical: TripartiteCovariance
    analytic: TripartiteCovariance
    max_abs_z_score: float
    gain: float
    gain_objective: float
    estimate: ChannelEstimate
    covariance: TwoModeCovariance
    key_rate_empirical: float
    key_rate_analytic: float
    relative_error: float
    insufficient_statistics: bool


def _simulate_chunk(cfg: SimConfig, chunk_index: int, size: int) -> RoundRecords:
    rng = chunk_rng(cfg.seed, chunk_index)
    sd_a = math.sqrt(cfg.v_mod_a - 1)
    sd_b = math.sqrt(cfg.v_mod_b - 1)
    xa_p = rng.normal(0.0, sd_a, size)
    pa_p = rng.normal(0.0, sd_a, size)
    xb_p = rng.normal(0.0, sd_b, size)
    pb_p = rng.normal(0.0, sd_b, size)

    # coherent states: prepared displacement plus unit vacuum noise
    xa_in = xa_p + rng.standard_normal(size)
    pa_in = pa_p + rng.standard_normal(size)
    xb_in = xb_p + rng.standard_normal(size)
    pb_in = pb_p + rng.standard_normal(size)

    sd_noise_1 = math.sqrt(added_noise_variance(cfg.t1, cfg.excess_noise))
    sd_noise_2 = math.sqrt(added_noise_variance(cfg.t2, cfg.excess_noise))
    g1, g2 = math.sqrt(cfg.t1), math.sqrt(cfg.t2)
    xa3 = g1 * xa_in + rng.normal(0.0, sd_noise_1, size)
    pa3 = g1 * pa_in + rng.normal(0.0, sd_noise_1, size)
    xb3 = g2 * xb_in + rng.normal(0.0, sd_noise_2, size)
    pb3 = g2 * pb_in + rng.normal(0.0, sd_noise_2, size)

    return RoundRecords(
        xa_p=xa_p,
        pa_p=pa_p,
        xb_p=xb_p,
        pb_p=pb_p,
        xz=(xa3 - xb3) / SQRT2,
        pz=(pa3 + pb3) / SQRT2,
    )


def simulate_batch(cfg: SimConfig) -> Iterator[RoundRecords]:
    """Rounds in chunk order; chunk i depends only on (seed, i)."""
    for index, size in enumerate(chunk_sizes(cfg.num_pulses, cfg.chunk_size)):
        yield _simulate_chunk(cfg, index, size)


def simulate_records(cfg: SimConfig, workers: int = 1) -> RoundRecords:
    sizes = chunk_sizes(cfg.num_pulses, cfg.chunk_size)
    chunks = parallel_map(lambda item: _simulate_chunk(cfg, item[0], item[1]), list(enumerate(sizes)), workers)
    return RoundRecords(*(np.concatenate([getattr(c, name) for c in chunks]) for name in QUADRATURES))


def estimate_tripartite_covariance(records: RoundRecords) -> TripartiteCovariance:
    if len(records) < 2:
        raise ValueError(f"estimate_tripartite_covariance: need >= 2 records, got {len(records)}")
    gamma = np.cov(records.quadratures(), rowvar=False, ddof=1)
    return TripartiteCovariance.from_matrix(gamma, len(records))


def accumulate_moments(cfg: SimConfig, workers: int = 1) -> TripartiteCovariance:
    """Streaming Γ_XYZ; per-chunk moments merged in chunk order, identical for any worker count."""
    sizes = chunk_sizes(cfg.num_pulses, cfg.chunk_size)

    def chunk_moments(item: tuple[int, int]) -> MomentAccumulator:
        return MomentAccumulator.from_samples(_simulate_chunk(cfg, item[0], item[1]).quadratures())

    parts = parallel_map(chunk_moments, list(enumerate(sizes)), workers)
    total = parts[0]
    for part in parts[1:]:
        total = total.merge(part)
    return TripartiteCovariance.from_matrix(total.covariance(), total.count)


def analytic_tripartite_covariance(cfg: SimConfig) -> TripartiteCovariance:
    va = cfg.v_mod_a - 1
    vb = cfg.v_mod_b - 1
    tau1 = math.sqrt(cfg.t1 / 2)
    tau2 = math.sqrt(cfg.t2 / 2)
    eye = np.eye(2)
    z_var = (cfg.t1 * va + cfg.t2 * vb) / 2 + 1 + (cfg.t1 + cfg.t2) * cfg.excess_noise / 2
    return TripartiteCovariance(
        x=va * eye,
        y=vb * eye,
        z=z_var * eye,
        c_xz=tau1 * va * eye,
        c_yz=np.diag([-tau2 * vb, tau2 * vb]),
        count=cfg.num_pulses,
    )


def tripartite_standard_errors(analytic: TripartiteCovariance, n: int) -> FloatArray:
    """Gaussian sampling standard error of every empirical Γ_XYZ entry."""
    if n <= 0:
        raise ValueError(f"tripartite_standard_errors: n must be > 0, got {n}")
    gamma = analytic.matrix()
    diag = np.diag(gamma)
    return np.asarray(np.sqrt((np.outer(diag, diag) + gamma**2) / n))


def z_scores(empirical: TripartiteCovariance, analytic: TripartiteCovariance) -> FloatArray:
    """|empirical - analytic| in standard errors; entries with zero standard error must match exactly (else inf)."""
    se = tripartite_standard_errors(analytic, empirical.count)
    diff = np.abs(empirical.matrix() - analytic.matrix())
    scores = np.divide(diff, se, out=np.where(diff > 0, np.inf, 0.0), where=se > 0)
    return np.asarray(scores)


def max_z_score(empirical: TripartiteCovariance, analytic: TripartiteCovariance) -> float:
    return float(np.max(z_scores(empirical, analytic)))


def displace_keys(records: RoundRecords, k: float) -> RoundRecords:
    if not math.isfinite(k):
        raise ValueError(f"displace_keys: k must be finite, got {k}")
    return dataclasses.replace(
        records,
        xa=records.xa_p - k * records.xz,
        pa=records.pa_p - k * records.pz,
        xb=records.xb_p + k * records.xz,
        pb=records.pb_p - k * records.pz,
    )


def _displacement_map(k: float) -> FloatArray:
    return np.array(
        [
            [1.0, 0.0, 0.0, 0.0, -k, 0.0],
            [0.0, 1.0, 0.0, 0.0, 0.0, -k],
            [0.0, 0.0, 1.0, 0.0, k, 0.0],
            [0.0, 0.0, 0.0, 1.0, 0.0, -k],
        ],
    )


def displaced_covariance(tri: TripartiteCovariance, k: float) -> FloatArray:
    """Covariance of (x_A, p_A, x_B, p_B) after displacement, computed from Γ_XYZ alone."""
    m = _displacement_map(k)
    return np.asarray(m @ tri.matrix() @ m.T)


def _correlation(cov: FloatArray, i: int, j: int) -> float:
    denominator = cov[i, i] * cov[j, j]
    if denominator <= 0:
        return 0.0
    return float(cov[i, j] / math.sqrt(denominator))


def gain_objective(tri: TripartiteCovariance, k: float) -> float:
    """Mutual information of the displaced pair, counting only x-correlation > 0 and p-correlation < 0."""
    cov = displaced_covariance(tri, k)
    rho_x = min(max(_correlation(cov, 0, 2), 0.0), 1 - 1e-15)
    rho_p = min(max(-_correlation(cov, 1, 3), 0.0), 1 - 1e-15)
    return -0.5 * math.log2(1 - rho_x * rho_x) - 0.5 * math.log2(1 - rho_p * rho_p)


def optimize_gain(source: RoundRecords | TripartiteCovariance) -> Result[float]:
    """k maximizing gain_objective on [0, 4]: dense scan, then bounded Brent refinement around the best grid point."""
    tri = estimate_tripartite_covariance(source) if isinstance(source, RoundRecords) else source
    if tri.count < MIN_RECORDS:
        raise ValueError(f"optimize_gain: need >= {MIN_RECORDS} records, got {tri.count}")

    grid = np.linspace(*GAIN_BOUNDS, GAIN_SCAN_POINTS)
    values = np.array([gain_objective(tri, float(k)) for k in grid])
    best = int(np.argmax(values))
    if values[best] <= DEGENERATE_OBJECTIVE or np.ptp(values) <= DEGENERATE_OBJECTIVE:
        return Err("degenerate_optimum", data={"max_objective": float(values[best])})

    lo = float(grid[max(best - 1, 0)])
    hi = float(grid[min(best + 1, len(grid) - 1)])
    res = scipy.optimize.minimize_scalar(
        lambda k: -gain_objective(tri, k),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": GAIN_XTOL},
    )
    k_star, value = float(res.x), float(-res.fun)
    if value < values[best]:
        k_star, value = float(grid[best]), float(values[best])
    return Ok(k_star, data={"objective": value})


def estimate_channel(tri: TripartiteCovariance) -> ChannelEstimate:
    """Per-arm transmittance and excess noise by regressing Charlie's outcomes on the prepared data."""
    x_inv = np.linalg.pinv(tri.x)
    y_inv = np.linalg.pinv(tri.y)
    slope_a = x_inv @ tri.c_xz
    slope_b = y_inv @ tri.c_yz
    tau_a = 0.5 * (slope_a[0, 0] + slope_a[1, 1])
    tau_b = 0.5 * (-slope_b[0, 0] + slope_b[1, 1])
    t1_raw = 2 * tau_a * tau_a
    t2_raw = 2 * tau_b * tau_b

    residual = tri.z - tri.c_xz.T @ x_inv @ tri.c_xz - tri.c_yz.T @ y_inv @ tri.c_yz
    noise = float(np.mean(np.diag(residual)))

    t1 = min(max(t1_raw, TRANSMITTANCE_FLOOR), 1.0)
    t2 = min(max(t2_raw, TRANSMITTANCE_FLOOR), 1.0)
    eps_raw = 2 * (noise - 1) / (t1 + t2)
    eps = max(eps_raw, 0.0)
    clamped = (t1, t2, eps) != (t1_raw, t2_raw, eps_raw)
    if clamped:
        logger.warning("estimate_channel: clamped T1=%g T2=%g eps=%g into the model domain", t1_raw, t2_raw, eps_raw)

    prepared_a = 0.5 * float(np.trace(tri.x))
    prepared_b = 0.5 * float(np.trace(tri.y))
    z_mean = 0.5 * float(np.trace(tri.z))
    rel_se = max(
        _slope_rel_se(tau_a, prepared_a, z_mean, tri.count),
        _slope_rel_se(tau_b, prepared_b, z_mean, tri.count),
    )
    return ChannelEstimate(
        t1=t1,
        t2=t2,
        eps=eps,
        v_a=prepared_a + 1,
        v_b=prepared_b + 1,
        transmittance_rel_se=rel_se,
        clamped=clamped,
    )


def _slope_rel_se(tau: float, prepared: float, z_var: float, n: int) -> float:
    # T = 2τ², so rel SE(T) = 2·SE(τ)/τ; τ averages two quadrature slopes
    if tau == 0 or prepared <= 0 or n < 2:
        return math.inf
    residual_var = max(z_var - tau * tau * prepared, 0.0)
    se_tau = math.sqrt(residual_var / (2 * n * prepared))
    return 2 * se_tau / abs(tau)


def pooled_variance(v_a: float, v_b: float) -> float:
    return 0.5 * (v_a + v_b)


def effective_two_mode_covariance(tri: TripartiteCovariance, k: float, check: bool = True) -> TwoModeCovariance:
    """Γ_AB^G reconstructed from locally estimated channel parameters.

    The displaced moments at gain k are checked for the σz structure ⟨p_A p_B⟩ ≈ -⟨x_A x_B⟩; a violation
    beyond CONVENTION_SIGMAS standard errors raises when check is set and is logged otherwise.
    """
    cov = displaced_covariance(tri, k)
    cx, cp = cov[0, 2], cov[1, 3]
    n = max(tri.count, 1)
    se = math.sqrt((cov[0, 0] * cov[2, 2] + cx * cx + cov[1, 1] * cov[3, 3] + cp * cp) / n)
    if abs(cp + cx) > CONVENTION_SIGMAS * se:
        msg = f"effective_two_mode_covariance: sign convention violated, <pA pB>={cp:g}, <xA xB>={cx:g}, se={se:g}"
        if check:
            raise ValueError(msg)
        logger.warning(msg)

    est = estimate_channel(tri)
    # the two-arm EPR form takes a single V
    result = entangling_cloner_covariance(est.t1, est.t2, est.eps, pooled_variance(est.v_a, est.v_b))
    symplectic_eigenvalues(result)
    return result


def _fallback_gain(est: ChannelEstimate) -> float:
    # optimum of the symmetric displaced correlation, from the estimated channel
    t = 0.5 * (est.t1 + est.t2)
    v = pooled_variance(est.v_a, est.v_b) - 1
    return math.sqrt(t / 2) * v / (t * v + 1 + t * est.eps)


def run_simulation(cfg: SimConfig, beta: float, workers: int = 1) -> Result[SimulationSummary]:
    """Full protocol run without storing records: moments, gain, reconstruction, empirical vs model key rate."""
    if cfg.num_pulses < 2:
        raise ValueError(f"run_simulation: need >= 2 pulses, got {cfg.num_pulses}")
    empirical = accumulate_moments(cfg, workers)
    analytic = analytic_tripartite_covariance(cfg)
    max_abs_z = max_z_score(empirical, analytic)

    est = estimate_channel(empirical)
    insufficient = bool(empirical.count < MIN_RECORDS or est.transmittance_rel_se > MAX_TRANSMITTANCE_REL_SE)
    if insufficient:
        logger.warning(
            "run_simulation: insufficient statistics (pulses=%d, transmittance rel SE=%.3g)",
            empirical.count,
            est.transmittance_rel_se,
        )

    if isinstance(cfg.gain_k, float):
        gain = cfg.gain_k
    elif empirical.count < MIN_RECORDS:
        gain = _fallback_gain(est)
        logger.warning("run_simulation: too few pulses to optimize the gain, using k=%g from the channel estimate", gain)
    else:
        gain_res = optimize_gain(empirical)
        if isinstance(gain_res, Err):
            return Err(gain_res.err, data=gain_res.data)
        gain = gain_res.unwrap()
    logger.debug("run_simulation: gain k=%g", gain)

    cov = effective_two_mode_covariance(empirical, gain, check=not insufficient)
    rate_empirical = asymptotic_key_rate(cov, beta)
    model = entangling_cloner_covariance(cfg.t1, cfg.t2, cfg.excess_noise, pooled_variance(cfg.v_mod_a, cfg.v_mod_b))
    rate_analytic = asymptotic_key_rate(model, beta)

    return Ok(
        SimulationSummary(
            config=cfg,
            beta=beta,
            empirical=empirical,
            analytic=analytic,
            max_abs_z_score=max_abs_z,
            gain=gain,
            gain_objective=gain_objective(empirical, gain),
            estimate=est,
            covariance=cov,
            key_rate_empirical=rate_empirical,
            key_rate_analytic=rate_analytic,
            relative_error=relative_error(rate_empirical, rate_analytic),
            insufficient_statistics=insufficient,
        ),
    )
