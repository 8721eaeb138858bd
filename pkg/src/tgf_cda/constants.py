"""Closed-form constants of the energy estimate and the nudging-gain window."""

from __future__ import annotations

import math

__all__ = [
    "drift_bound_M",
    "additive_bracket",
    "kappa_lower",
    "kappa_upper",
    "envelope_coefficient",
    "moment_constant",
]


def drift_bound_M(K, K_tilde, lambda1, area, alpha, beta, h_dual_norm) -> float:
    """M = K + (K~/lambda1 + 1)^2 |D| / (4 beta) + 27 alpha^4 |D| / (4 beta^3) + ||h||_{V*}^2."""
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if not lambda1 > 0:
        raise ValueError(f"lambda1 must be positive, got {lambda1}")
    return (
        K
        + (K_tilde / lambda1 + 1.0) ** 2 * area / (4.0 * beta)
        + 27.0 * alpha**4 * area / (4.0 * beta**3)
        + h_dual_norm**2
    )


def additive_bracket(hs_sq, area, alpha, beta, h_dual_norm) -> float:
    """Pathwise replacement for M: ||Phi||_LG^2 + (1/(4 beta) + 27 alpha^4/(4 beta^3)) |D| + ||h||^2."""
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    return hs_sq + (1.0 / (4.0 * beta) + 27.0 * alpha**4 / (4.0 * beta**3)) * area + h_dual_norm**2


def _check_eps(epsilon0: float) -> None:
    if not 0.0 < epsilon0 <= 1.0:
        raise ValueError(f"epsilon0 must lie in (0, 1], got {epsilon0}")


def kappa_lower(Nd, M, beta, lambda1, nu, epsilon0, L) -> float:
    """27 Nd^4 M / (4 beta lambda1 nu^3 eps0^3) + L."""
    _check_eps(epsilon0)
    if not (beta > 0 and lambda1 > 0 and nu > 0):
        raise ValueError("beta, lambda1 and nu must be positive")
    return 27.0 * Nd**4 * M / (4.0 * beta * lambda1 * nu**3 * epsilon0**3) + L


def kappa_upper(nu, epsilon0, c0, varpi) -> float:
    """nu eps0 / (c0 varpi^2)."""
    _check_eps(epsilon0)
    if not varpi > 0:
        raise ValueError(f"varpi must be positive, got {varpi}")
    if not c0 > 0:
        raise ValueError(f"c0 must be positive, got {c0}")
    return nu * epsilon0 / (c0 * varpi**2)


def envelope_coefficient(Nd, lambda1, nu, epsilon0) -> float:
    """Weight 27 Nd^4 / (16 lambda1 nu^3 eps0^3) of the accumulated strain integral."""
    _check_eps(epsilon0)
    return 27.0 * Nd**4 / (16.0 * lambda1 * nu**3 * epsilon0**3)


def moment_constant(M, nu, lambda1) -> float:
    """Reference scale (M / (nu lambda1))^2 for the fourth moment of the energy."""
    return (M / (nu * lambda1)) ** 2


def envelope_value(err0: float, kappa: float, t: float, coeff: float, accum: float) -> float:
    """err0 exp(-kappa t + coeff accum); the exponent is capped at 700."""
    if coeff is None or not math.isfinite(coeff):
        return float("nan")
    return err0 * math.exp(min(-kappa * t + coeff * accum, 700.0))
