"""Composition -> property models.

Two models share one interface, ``props(rho)`` and ``prop_grads(rho)``, with
``rho`` of shape (N, S):

* :class:`MaterialSystem` interpolates anchor data with Gaussian radial basis
  functions, ``P(rho) = sum_j c_j exp(-eps^2 |rho - rho*_j|^2)``.
* :class:`LinearSingleMaterial` is the single-component model
  ``E = E0 rho``, ``density = density0 rho``.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from typing import NamedTuple

import numpy as np

from .errors import FitFailure, InvalidArgument

PROPERTY_NAMES = ("E", "density", "kappa", "alpha")
MAX_CONDITION = 1e12


class Props(NamedTuple):
    """Per-point property arrays; each of shape (N,) or (N, S) for gradients."""

    E: np.ndarray
    density: np.ndarray
    kappa: np.ndarray
    alpha: np.ndarray


@dataclass(frozen=True)
class PropertyAnchor:
    composition: tuple[float, ...]
    E: float
    density: float
    kappa: float
    alpha: float


@dataclass(frozen=True)
class MaterialSystem:
    anchors: tuple[PropertyAnchor, ...]
    epsilon: float
    centers: np.ndarray  # (M, S)
    coeffs: np.ndarray  # (M, 4), columns in PROPERTY_NAMES order

    @property
    def n_components(self) -> int:
        return self.centers.shape[1]

    def _kernel(self, rho):
        rho = np.atleast_2d(np.asarray(rho, float))
        diff = rho[:, None, :] - self.centers[None, :, :]  # (N, M, S)
        phi = np.exp(-self.epsilon**2 * np.einsum("nms,nms->nm", diff, diff))
        return diff, phi

    def props(self, rho) -> Props:
        _, phi = self._kernel(rho)
        vals = phi @ self.coeffs
        return Props(*vals.T)

    def prop_grads(self, rho) -> Props:
        diff, phi = self._kernel(rho)
        # d phi_m / d rho_s = -2 eps^2 (rho - c_m)_s phi_m
        dphi = -2 * self.epsilon**2 * diff * phi[:, :, None]  # (N, M, S)
        g = np.einsum("nms,mp->pns", dphi, self.coeffs)
        return Props(*g)


def fit_rbf(anchors, epsilon: float = 1.0) -> MaterialSystem:
    anchors = tuple(anchors)
    if not anchors:
        raise FitFailure("at least one anchor is required")
    centers = np.array([a.composition for a in anchors], float)
    values = np.array([[a.E, a.density, a.kappa, a.alpha] for a in anchors], float)
    d2 = ((centers[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
    Phi = np.exp(-epsilon**2 * d2)
    cond = np.linalg.cond(Phi)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        close = np.argwhere(np.triu(d2 < 1e-24, 1))
        detail = f"; duplicate anchors {close.tolist()}" if close.size else ""
        raise FitFailure(f"RBF kernel matrix is ill-conditioned (cond={cond:.3e}, epsilon={epsilon}){detail}")
    coeffs = np.linalg.solve(Phi, values)
    return MaterialSystem(anchors, float(epsilon), centers, coeffs)


def eval_props(system, rho) -> Props:
    return system.props(rho)


def eval_prop_grads(system, rho) -> Props:
    return system.prop_grads(rho)


@dataclass(frozen=True)
class LinearSingleMaterial:
    """E = E0 rho, density = density0 rho; conductivity and expansion are constant."""

    E0: float = 1.0
    density0: float = 1.0
    kappa0: float = 1.0
    alpha0: float = 0.0

    n_components = 1

    def props(self, rho) -> Props:
        r = np.atleast_2d(np.asarray(rho, float))[:, 0]
        return Props(self.E0 * r, self.density0 * r, np.full_like(r, self.kappa0), np.full_like(r, self.alpha0))

    def prop_grads(self, rho) -> Props:
        r = np.atleast_2d(np.asarray(rho, float))
        n = r.shape[0]
        return Props(
            np.full((n, 1), self.E0), np.full((n, 1), self.density0), np.zeros((n, 1)), np.zeros((n, 1))
        )


def read_anchor_table(source) -> list[PropertyAnchor]:
    """Parse an anchor table: whitespace-separated rows ``rho_1 .. rho_S E density kappa alpha``.

    ``#`` starts a comment. ``source`` is a path, or ``builtin:<name>`` for a
    dataset shipped with the package.
    """
    if isinstance(source, str) and source.startswith("builtin:"):
        text = resources.files("cgaopt.data").joinpath(source.split(":", 1)[1] + ".dat").read_text()
    else:
        with open(source) as fh:
            text = fh.read()
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            rows.append([float(v) for v in line.split()])
        except ValueError as exc:
            raise InvalidArgument(f"{source}:{lineno}: {exc}") from exc
    if not rows:
        raise InvalidArgument(f"{source}: no anchor rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1 or widths.pop() < 5:
        raise InvalidArgument(f"{source}: rows need S compositions followed by E, density, kappa, alpha")
    return [PropertyAnchor(tuple(r[:-4]), *r[-4:]) for r in rows]


def load_material_dataset(source, epsilon: float = 1.0) -> MaterialSystem:
    return fit_rbf(read_anchor_table(source), epsilon)
