"""Constraint functionals, the log-barrier transform and the total loss.

All constraints are written as g <= 0 and come with their gradient with
respect to the element composition field rho (N_e, S).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidArgument, NonFiniteError


@dataclass
class Constraint:
    name: str
    value: float
    grad: np.ndarray  # same shape as rho


@dataclass(frozen=True)
class BarrierSchedule:
    """tau_k = tau0 * mu**k, optionally held at ``tau_max`` once reached."""

    tau0: float = 3.0
    mu: float = 1.04
    tau_max: float = float("inf")

    def __post_init__(self):
        if self.tau0 <= 0 or self.mu < 1 or self.tau_max < self.tau0:
            raise InvalidArgument("barrier schedule needs tau0 > 0, mu >= 1 and tau_max >= tau0")

    def tau(self, k: int) -> float:
        return min(self.tau0 * self.mu**k, self.tau_max)


def mass_constraint(density: np.ndarray, ddensity: np.ndarray, area: np.ndarray, m_star: float) -> Constraint:
    """g_m = sum_e density_e A_e / m* - 1."""
    g = float(density @ area) / m_star - 1.0
    return Constraint("g_m", g, ddensity * (area / m_star)[:, None])


def lse_upper(rho: np.ndarray, t: float = 10.0) -> Constraint:
    """g_u = (1/t) log sum exp(t rho) - 1 over every entry."""
    x = t * rho
    v = logsumexp(x)
    return Constraint("g_u", float(v / t - 1.0), np.exp(x - v))


def lse_lower(rho: np.ndarray, t: float = 10.0) -> Constraint:
    """g_l = -smoothmin(rho) = (1/t) log sum exp(-t rho); g_l <= 0 asks min(rho) >= 0."""
    x = -t * rho
    v = logsumexp(x)
    return Constraint("g_l", float(v / t), -np.exp(x - v))


def lse_bounds(rho: np.ndarray, t: float = 10.0) -> tuple[Constraint, Constraint]:
    return lse_upper(rho, t), lse_lower(rho, t)


def partition_constraint(rho: np.ndarray) -> tuple[Constraint, float]:
    """Element-averaged partition deviation and the max per-element deviation."""
    dev = rho.sum(axis=1) - 1.0
    n = rho.shape[0]
    return Constraint("g_p", float(dev.mean()), np.full_like(rho, 1.0 / n)), float(np.abs(dev).max())


def barrier(g: float, tau: float) -> tuple[float, float]:
    """Extended log barrier psi_tau(g) and d psi / d g.

    Logarithmic for g <= -1/tau^2, continued linearly (C1) beyond so that
    infeasible points still have finite loss.
    """
    if g <= -1.0 / tau**2:
        return -np.log(-g) / tau, -1.0 / (tau * g)
    return tau * g - np.log(1.0 / tau**2) / tau + 1.0 / tau, tau


@dataclass
class LossTerms:
    loss: float
    grad: np.ndarray  # dL/drho
    J_ratio: float
    values: dict = field(default_factory=dict)


def total_loss(J: float, dJ: np.ndarray, J0: float, constraints: list[Constraint], tau: float) -> LossTerms:
    """L = J/J0 + sum psi_tau(g). An equality constraint named ``g_p`` enters as +g_p and -g_p."""
    loss = J / J0
    grad = dJ / J0
    values = {"J": J, "J/J0": J / J0}
    for c in constraints:
        values[c.name] = c.value
        signs = (1.0, -1.0) if c.name == "g_p" else (1.0,)
        for s in signs:
            psi, dpsi = barrier(s * c.value, tau)
            loss += psi
            grad = grad + (s * dpsi) * c.grad
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise NonFiniteError(f"non-finite loss {loss}", dump=values)
    return LossTerms(float(loss), grad, J / J0, values)
