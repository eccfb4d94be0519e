"""Gaussian-information primitives for two-mode states in shot-noise units (vacuum variance 1)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dpm_cvqkd.types import FloatArray

PHYSICALITY_TOL = 1e-9
RADICAND_TOL = 1e-12


@dataclass(frozen=True)
class TwoModeCovariance:
    """Covariance [[a·I, c·σz], [c·σz, b·I]] of the symmetric two-mode Gaussian state."""

    a: float
    b: float
    c: float

    def matrix(self) -> FloatArray:
        """4x4 matrix in (x_A, p_A, x_B, p_B) order."""
        a, b, c = self.a, self.b, self.c
        return np.array(
            [
                [a, 0.0, c, 0.0],
                [0.0, a, 0.0, -c],
                [c, 0.0, b, 0.0],
                [0.0, -c, 0.0, b],
            ],
        )


@dataclass(frozen=True)
class SymplecticPair:
    lambda1: float
    lambda2: float


def von_neumann_g(x: float) -> float:
    if x < 0:
        raise ValueError(f"von_neumann_g: argument must be >= 0, got {x}")
    if x == 0:
        return 0.0
    return (x + 1) * math.log2(x + 1) - x * math.log2(x)


def symplectic_eigenvalues(cov: TwoModeCovariance) -> SymplecticPair:
    a, b, c = cov.a, cov.b, cov.c
    delta = a * a + b * b - 2 * c * c
    d = a * b - c * c
    # delta^2 - 4d^2 factorized; exact zero on the a == b line
    radicand = (a - b) ** 2 * ((a + b) ** 2 - 4 * c * c)
    if radicand < 0:
        if radicand < -RADICAND_TOL:
            raise ValueError(f"symplectic_eigenvalues: unphysical covariance matrix {cov}")
        radicand = 0.0
    root = math.sqrt(radicand)
    lambda1 = math.sqrt(max((delta + root) / 2, 0.0))
    lambda2 = math.sqrt(max((delta - root) / 2, 0.0))
    if lambda2 < 1 - PHYSICALITY_TOL or min(a, b) < 1 - PHYSICALITY_TOL:
        raise ValueError(f"symplectic_eigenvalues: unphysical covariance matrix {cov}, lambda2={lambda2}")
    return SymplecticPair(lambda1=lambda1, lambda2=lambda2)


def symplectic_spectrum_oracle(gamma: FloatArray) -> list[float]:
    """Symplectic spectrum of a 4x4 covariance matrix: moduli of the eigenvalues of iΩΓ.

    Computed from the Hermitian matrix Γ^½·iΩ·Γ^½, which has the same spectrum.
    Independent of the closed form in symplectic_eigenvalues; used to cross-check it.
    Returns the two values in descending order.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.shape != (4, 4):
        raise ValueError(f"symplectic_spectrum_oracle: expected a 4x4 matrix, got shape {gamma.shape}")
    if not np.allclose(gamma, gamma.T, rtol=0.0, atol=1e-12):
        raise ValueError("symplectic_spectrum_oracle: matrix is not symmetric")
    eigenvalues, eigenvectors = np.linalg.eigh(gamma)
    if eigenvalues.min() <= 0:
        raise ValueError("symplectic_spectrum_oracle: matrix is not positive definite")
    root = eigenvectors @ np.diag(np.sqrt(eigenvalues)) @ eigenvectors.T
    omega = np.kron(np.eye(2), np.array([[0.0, 1.0], [-1.0, 0.0]]))
    moduli = np.sort(np.abs(np.linalg.eigvalsh(root @ (1j * omega) @ root)))[::-1]
    # eigenvalues come in ± pairs
    return [float(moduli[0]), float(moduli[2])]


def conditional_eigenvalue_heterodyne(cov: TwoModeCovariance) -> float:
    """Symplectic eigenvalue of B conditioned on heterodyne detection of A: b - c²/(a+1)."""
    lambda3 = cov.b - cov.c * cov.c / (cov.a + 1)
    if lambda3 < 1 - PHYSICALITY_TOL:
        raise ValueError(f"conditional_eigenvalue_heterodyne: unphysical covariance matrix {cov}")
    return lambda3


def mutual_information(cov: TwoModeCovariance) -> float:
    denominator = cov.b + 1 - cov.c * cov.c / (cov.a + 1)
    if denominator <= 0:
        raise ValueError(f"mutual_information: unphysical covariance matrix {cov}")
    return math.log2((cov.b + 1) / denominator)


def _entropy_term(eigenvalue: float) -> float:
    # eigenvalues already passed the physicality check, rounding below 1 is clipped
    return von_neumann_g(max((eigenvalue - 1) / 2, 0.0))


def holevo_bound(cov: TwoModeCovariance) -> float:
    pair = symplectic_eigenvalues(cov)
    lambda3 = conditional_eigenvalue_heterodyne(cov)
    return _entropy_term(pair.lambda1) + _entropy_term(pair.lambda2) - _entropy_term(lambda3)


def asymptotic_key_rate(cov: TwoModeCovariance, beta: float) -> float:
    """beta·I(A:B) - χ_E in bits per pulse; a value <= 0 means no key."""
    if not 0 < beta <= 1:
        raise ValueError(f"asymptotic_key_rate: beta must be in (0, 1], got {beta}")
    return beta * mutual_information(cov) - holevo_bound(cov)
