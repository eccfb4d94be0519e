"""Jones calculus of the plug-and-play dual-phase modulator: Faraday mirror, birefringent round trip, two-arm interferometer."""

from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass

import numpy as np
from mm_std import Err, Ok, Result

from dpm_cvqkd.types import ComplexArray, Direction, FloatArray, JonesMatrix, JonesVector

logger = logging.getLogger(__name__)

IDEAL_FM_ANGLE = math.pi / 4
CLIP_RADIUS_SIGMAS = 6.0

IDENTITY_TOL = 1e-13
EQUIVALENCE_TOL = 1e-13
SYNTHESIS_TOL = 1e-12
VARIANCE_REL_TOL = 0.02


@dataclass(frozen=True)
class DpmModulation:
    """Gaussian modulation realized by the two phase modulators of one DPM arm pair."""

    phi1: FloatArray
    phi2: FloatArray
    amplitudes: ComplexArray
    input_amplitude: float
    redrawn: int


@dataclass(frozen=True)
class VerificationCheck:
    name: str
    max_deviation: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tolerance


def rotation(angle: float) -> JonesMatrix:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]], dtype=np.complex128)


def faraday_mirror(theta: float) -> JonesMatrix:
    c, s = math.cos(2 * theta), math.sin(2 * theta)
    return np.array([[c, -s], [-s, -c]], dtype=np.complex128)


def birefringent_line(delta: float, phi_o: float, phi_e: float, direction: Direction) -> JonesMatrix:
    """T(+δ) forward, T(-δ) backward: rotation · diag(e^{iφo}, e^{iφe}) · counter-rotation."""
    if direction == "forward":
        sign = 1.0
    elif direction == "backward":
        sign = -1.0
    else:
        raise ValueError(f"birefringent_line: unknown direction {direction!r}")
    retarder = np.diag([cmath.exp(1j * phi_o), cmath.exp(1j * phi_e)])
    return rotation(sign * delta) @ retarder @ rotation(-sign * delta)


def roundtrip_rotated_element(delta: float, phi_o: float, phi_e: float, theta: float = IDEAL_FM_ANGLE) -> JonesMatrix:
    """Explicit product T(-δ)·J_FM(θ)·T(δ). Equals e^{i(φo+φe)}·J_FM only for the ideal mirror θ = π/4."""
    forward = birefringent_line(delta, phi_o, phi_e, "forward")
    backward = birefringent_line(delta, phi_o, phi_e, "backward")
    return backward @ faraday_mirror(theta) @ forward


def dpm_arm(varsigma: float, phi: float, r: JonesMatrix) -> JonesMatrix:
    if not 0 < varsigma <= 1:
        raise ValueError(f"dpm_arm: varsigma must be in (0, 1], got {varsigma}")
    return varsigma * cmath.exp(1j * phi) * r


def dpm_output(
    input_vector: JonesVector,
    arm1: tuple[float, float],
    arm2: tuple[float, float],
    r: JonesMatrix,
) -> JonesVector:
    """Both arms recombined on the 50:50 coupler; arms are (varsigma, phi) pairs."""
    combined = 0.5 * (dpm_arm(arm1[0], arm1[1], r) + dpm_arm(arm2[0], arm2[1], r))
    return combined @ np.asarray(input_vector, dtype=np.complex128)


def modulation_factor(varsigma: float, phi1: float, phi2: float) -> complex:
    return varsigma * cmath.exp(0.5j * (phi1 + phi2)) * math.cos(0.5 * (phi1 - phi2))


def modulation_polar(varsigma: float, phi1: float, phi2: float) -> tuple[float, float]:
    """(amplitude, phase) of the modulation factor; a negative cosine becomes a π phase shift."""
    cosine = math.cos(0.5 * (phi1 - phi2))
    phase = 0.5 * (phi1 + phi2)
    if cosine < 0:
        phase += math.pi
    return varsigma * abs(cosine), phase


def dpm_simplified_output(input_vector: JonesVector, varsigma: float, phi1: float, phi2: float, r: JonesMatrix) -> JonesVector:
    if not 0 < varsigma <= 1:
        raise ValueError(f"dpm_simplified_output: varsigma must be in (0, 1], got {varsigma}")
    return modulation_factor(varsigma, phi1, phi2) * (r @ np.asarray(input_vector, dtype=np.complex128))


def synthesize_phases(
    target_amplitude: float,
    target_phase: float,
    varsigma: float,
    input_amplitude: float,
) -> Result[tuple[float, float]]:
    if target_amplitude < 0:
        raise ValueError(f"synthesize_phases: target_amplitude must be >= 0, got {target_amplitude}")
    if not 0 < varsigma <= 1:
        raise ValueError(f"synthesize_phases: varsigma must be in (0, 1], got {varsigma}")
    if input_amplitude <= 0:
        raise ValueError(f"synthesize_phases: input_amplitude must be > 0, got {input_amplitude}")
    ratio = target_amplitude / (varsigma * input_amplitude)
    if ratio > 1:
        return Err("unreachable_target", data={"ratio": ratio})
    half_difference = math.acos(ratio)
    return Ok((target_phase + half_difference, target_phase - half_difference))


def gaussian_modulation_via_dpm(v_mod: float, count: int, seed: int, varsigma: float = 1.0) -> DpmModulation:
    """Draw Gaussian coherent-state amplitudes (x + ip, per-quadrature variance v_mod) and realize them with two PMs.

    The input amplitude covers the 6σ disc; samples outside it are re-drawn from the same generator.
    """
    if v_mod <= 0:
        raise ValueError(f"gaussian_modulation_via_dpm: v_mod must be > 0, got {v_mod}")
    if count <= 0:
        raise ValueError(f"gaussian_modulation_via_dpm: count must be > 0, got {count}")
    if not 0 < varsigma <= 1:
        raise ValueError(f"gaussian_modulation_via_dpm: varsigma must be in (0, 1], got {varsigma}")

    rng = np.random.default_rng(seed)
    sigma = math.sqrt(v_mod)
    radius = CLIP_RADIUS_SIGMAS * sigma
    input_amplitude = radius / varsigma

    targets = rng.normal(0.0, sigma, count) + 1j * rng.normal(0.0, sigma, count)
    redrawn = 0
    outside = np.flatnonzero(np.abs(targets) > radius)
    while outside.size:
        redrawn += outside.size
        targets[outside] = rng.normal(0.0, sigma, outside.size) + 1j * rng.normal(0.0, sigma, outside.size)
        outside = outside[np.abs(targets[outside]) > radius]
    if redrawn:
        logger.debug("gaussian_modulation_via_dpm: re-drew %d samples outside the %g-sigma disc", redrawn, CLIP_RADIUS_SIGMAS)

    half_difference = np.arccos(np.minimum(np.abs(targets) / (varsigma * input_amplitude), 1.0))
    phase = np.angle(targets)
    phi1 = phase + half_difference
    phi2 = phase - half_difference
    amplitudes = input_amplitude * varsigma * np.exp(0.5j * (phi1 + phi2)) * np.cos(0.5 * (phi1 - phi2))
    return DpmModulation(phi1=phi1, phi2=phi2, amplitudes=amplitudes, input_amplitude=input_amplitude, redrawn=redrawn)


def _random_unit_vector(rng: np.random.Generator) -> JonesVector:
    v = rng.normal(size=2) + 1j * rng.normal(size=2)
    return v / np.linalg.norm(v)


def run_verification(trials: int, seed: int, samples: int = 10**6, inject_error: bool = False) -> list[VerificationCheck]:
    """Randomized checks of the round-trip identity, the two output forms, phase synthesis and Gaussian modulation.

    inject_error perturbs the round-trip product so the identity check fails; used to exercise the failure path.
    """
    if trials <= 0:
        raise ValueError(f"run_verification: trials must be > 0, got {trials}")
    rng = np.random.default_rng(seed)
    two_pi = 2 * math.pi

    identity_dev = 0.0
    equivalence_dev = 0.0
    synthesis_dev = 0.0
    for _ in range(trials):
        delta, phi_o, phi_e = rng.uniform(0, two_pi, 3)
        r = roundtrip_rotated_element(delta, phi_o, phi_e)
        if inject_error:
            r = r + 1e-9
        expected = cmath.exp(1j * (phi_o + phi_e)) * faraday_mirror(IDEAL_FM_ANGLE)
        identity_dev = max(identity_dev, float(np.abs(r - expected).max()))

        varsigma = float(rng.uniform(0.05, 1.0))
        phi1, phi2 = rng.uniform(-two_pi, two_pi, 2)
        vector = _random_unit_vector(rng)
        full = dpm_output(vector, (varsigma, phi1), (varsigma, phi2), r)
        simplified = dpm_simplified_output(vector, varsigma, phi1, phi2, r)
        equivalence_dev = max(equivalence_dev, float(np.abs(full - simplified).max()))

        input_amplitude = float(rng.uniform(0.5, 2.0))
        target = float(rng.uniform(0, varsigma * input_amplitude))
        target_phase = float(rng.uniform(-math.pi, math.pi))
        p1, p2 = synthesize_phases(target, target_phase, varsigma, input_amplitude).unwrap()
        produced = input_amplitude * modulation_factor(varsigma, p1, p2)
        synthesis_dev = max(synthesis_dev, abs(produced - target * cmath.exp(1j * target_phase)))

    v_mod = float(rng.uniform(1.0, 40.0))
    modulation = gaussian_modulation_via_dpm(v_mod, samples, seed)
    variance_dev = max(
        abs(float(np.var(modulation.amplitudes.real)) / v_mod - 1),
        abs(float(np.var(modulation.amplitudes.imag)) / v_mod - 1),
    )

    return [
        VerificationCheck("roundtrip_identity", identity_dev, IDENTITY_TOL),
        VerificationCheck("dpm_output_equivalence", equivalence_dev, EQUIVALENCE_TOL),
        VerificationCheck("phase_synthesis_roundtrip", synthesis_dev, SYNTHESIS_TOL),
        VerificationCheck("modulation_variance_relative", variance_dev, VARIANCE_REL_TOL),
    ]
