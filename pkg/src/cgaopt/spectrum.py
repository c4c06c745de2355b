"""Frequency-domain checks on composition fields and gradation audits.

Fields live on the element-center lattice of a uniform grid. Spectra use
cycles per unit length, with resolution 1/lx and 1/ly. Energies are
normalized so that Parseval holds with the spatial sum of squares.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import field_net as fn
from .errors import InvalidArgument
from .mesh import Grid2D

# Frequencies within this (relative) distance of the band edge count as in-band.
_EDGE_TOL = 1e-9


@dataclass
class SpectrumReport:
    """2D DFT of an (ny, nx, S) field sampled on a uniform lattice."""

    fx: np.ndarray  # (nx,) cycles per unit length, fftfreq order
    fy: np.ndarray  # (ny,)
    coeffs: np.ndarray  # (S, ny, nx) complex DFT coefficients
    lx: float
    ly: float

    @property
    def n_components(self) -> int:
        return self.coeffs.shape[0]

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.coeffs)

    @property
    def energy(self) -> np.ndarray:
        """Per-bin energy |F|^2 / N, summing to the spatial sum of squares."""
        n = self.coeffs.shape[1] * self.coeffs.shape[2]
        return np.abs(self.coeffs) ** 2 / n

    def total_energy(self) -> np.ndarray:
        return self.energy.sum(axis=(1, 2))

    def ac_energy(self) -> np.ndarray:
        return self.total_energy() - self.energy[:, 0, 0]

    def out_of_band(self, bx: float, by: float) -> dict:
        """Out-of-band energy fractions per component: along x, along y and jointly."""
        e = self.energy.copy()
        e[:, 0, 0] = 0.0
        ac = e.sum(axis=(1, 2))
        out_x = np.abs(self.fx)[None, :] > bx * (1 + _EDGE_TOL) + _EDGE_TOL
        out_y = np.abs(self.fy)[:, None] > by * (1 + _EDGE_TOL) + _EDGE_TOL
        masks = {"x": np.broadcast_to(out_x, e.shape[1:]), "y": np.broadcast_to(out_y, e.shape[1:]),
                 "joint": out_x | out_y}
        res = {}
        for key, m in masks.items():
            num = (e * m).sum(axis=(1, 2))
            res[key] = np.divide(num, ac, out=np.zeros_like(num), where=ac > 0)
        return res


def field_to_lattice(values: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Element-ordered (Ne,) or (Ne, S) values -> (ny, nx, S) array."""
    v = np.asarray(values, float)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape[0] != grid.n_elem:
        raise InvalidArgument(f"expected {grid.n_elem} element values, got {v.shape[0]}")
    return v.reshape(grid.ny, grid.nx, -1)


def dft2(field: np.ndarray, lx: float, ly: float) -> SpectrumReport:
    """DFT of an (ny, nx) or (ny, nx, S) field covering an lx-by-ly box (no windowing)."""
    f = np.asarray(field, float)
    if f.ndim == 2:
        f = f[:, :, None]
    if f.ndim != 3:
        raise InvalidArgument(f"field must be (ny, nx) or (ny, nx, S), got shape {f.shape}")
    ny, nx, _ = f.shape
    coeffs = np.fft.fft2(np.moveaxis(f, 2, 0), axes=(1, 2))
    return SpectrumReport(np.fft.fftfreq(nx, d=lx / nx), np.fft.fftfreq(ny, d=ly / ny), coeffs, lx, ly)


def band_energy_ratio(report: SpectrumReport, bx: float, by: float) -> float:
    """Fraction of AC energy (all components pooled) with |f_x| > bx or |f_y| > by.

    Zero AC energy gives 0.
    """
    e = report.energy.copy()
    e[:, 0, 0] = 0.0
    ac = e.sum()
    if ac <= 0:
        return 0.0
    out = (np.abs(report.fx)[None, :] > bx * (1 + _EDGE_TOL) + _EDGE_TOL) | \
          (np.abs(report.fy)[:, None] > by * (1 + _EDGE_TOL) + _EDGE_TOL)
    return float((e * out).sum() / ac)


def network_period_spectrum(params: fn.MfnParams, oversample: float = 4.0) -> SpectrumReport:
    """Spectrum of a period-snapped network sampled over one full period.

    The sampling rate per axis is ``oversample`` times the Nyquist rate of
    the configured bandwidth, so lattice tones fall exactly on DFT bins and
    nothing leaks.
    """
    cfg = params.config
    if cfg.period is None:
        raise InvalidArgument("network has no period; its spectrum over a finite box leaks")
    if cfg.d_in != 2:
        raise InvalidArgument("only 2D networks are supported")
    counts = []
    for B, P in zip(cfg.bandwidth, cfg.period):
        counts.append(max(2, int(np.ceil(oversample * 2 * B * P))))
    (nx, ny), (px, py) = counts, cfg.period
    X, Y = np.meshgrid(np.arange(nx) * px / nx, np.arange(ny) * py / ny)
    rho = fn.forward(params, np.column_stack([X.ravel(), Y.ravel()]))
    return dft2(rho.reshape(ny, nx, -1), px, py)


@dataclass
class GradationAudit:
    bandwidth: tuple[float, float]
    slack: float
    max_grad: np.ndarray  # (S, 2) max |d rho_j / d x_d|
    argmax: np.ndarray  # (S, 2, 2) sample location of each maximum
    amplitude: np.ndarray  # (S,) M_j = max sampled |rho_j|
    bound: np.ndarray  # (S, 2) 2 pi B_d M_j
    n_samples: tuple[int, int]

    @property
    def passes(self) -> np.ndarray:
        return self.max_grad <= self.bound * (1 + self.slack)

    @property
    def passed(self) -> bool:
        return bool(np.all(self.passes))


def audit_samples(grid: Grid2D, refine: int = 2) -> tuple[np.ndarray, tuple[int, int]]:
    """Lattice ``refine`` times finer than the mesh, boundary included."""
    if refine < 1:
        raise InvalidArgument("refine must be >= 1")
    mx, my = refine * grid.nx + 1, refine * grid.ny + 1
    xs = np.linspace(0.0, grid.lx, mx)
    ys = np.linspace(0.0, grid.ly, my)
    X, Y = np.meshgrid(xs, ys)
    return np.column_stack([X.ravel(), Y.ravel()]), (mx, my)


def bernstein_audit(params: fn.MfnParams, grid: Grid2D, bandwidth=None, slack: float = 0.05,
                    refine: int = 2, chunk: int = 4096) -> GradationAudit:
    """Compare sampled max |d rho/dx_d| against 2 pi B_d M per component and axis."""
    bw = tuple(float(b) for b in (params.config.bandwidth if bandwidth is None else bandwidth))
    pts, shape = audit_samples(grid, refine)
    S = params.config.n_out
    max_grad = np.zeros((S, 2))
    argmax = np.zeros((S, 2, 2))
    amp = np.zeros(S)
    for lo in range(0, pts.shape[0], chunk):
        x = pts[lo:lo + chunk]
        amp = np.maximum(amp, np.abs(fn.forward(params, x)).max(axis=0))
        jac = np.abs(fn.spatial_jacobian(params, x))  # (n, S, 2)
        idx = jac.argmax(axis=0)
        best = np.take_along_axis(jac, idx[None], axis=0)[0]
        better = best > max_grad
        max_grad = np.where(better, best, max_grad)
        argmax = np.where(better[..., None], x[idx], argmax)
    bound = 2 * np.pi * np.asarray(bw)[None, :] * amp[:, None]
    return GradationAudit(bw, slack, max_grad, argmax, amp, bound, shape)


def report_lines(spectrum: SpectrumReport | None = None, bandwidth=None, audit: GradationAudit | None = None,
                 extra: dict | None = None) -> list[str]:
    """Key = value lines describing a spectrum and/or gradation audit."""
    lines = []
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v}")
    if spectrum is not None:
        bx, by = bandwidth
        oob = spectrum.out_of_band(bx, by)
        lines += [f"spectrum.resolution_x = {1.0 / spectrum.lx:.12g}",
                  f"spectrum.resolution_y = {1.0 / spectrum.ly:.12g}",
                  f"spectrum.band_x = {bx:.12g}",
                  f"spectrum.band_y = {by:.12g}",
                  f"spectrum.out_of_band = {band_energy_ratio(spectrum, bx, by):.6e}"]
        total, ac = spectrum.total_energy(), spectrum.ac_energy()
        for j in range(spectrum.n_components):
            lines += [f"spectrum.c{j}.total_energy = {total[j]:.12e}",
                      f"spectrum.c{j}.ac_energy = {ac[j]:.12e}"]
            for key in ("x", "y", "joint"):
                lines.append(f"spectrum.c{j}.out_of_band_{key} = {oob[key][j]:.6e}")
    if audit is not None:
        lines += [f"audit.bandwidth_x = {audit.bandwidth[0]:.12g}",
                  f"audit.bandwidth_y = {audit.bandwidth[1]:.12g}",
                  f"audit.slack = {audit.slack:.12g}",
                  f"audit.samples = {audit.n_samples[0]}x{audit.n_samples[1]}",
                  f"audit.passed = {str(audit.passed).lower()}"]
        for j in range(audit.max_grad.shape[0]):
            lines.append(f"audit.c{j}.amplitude = {audit.amplitude[j]:.12e}")
            for d, ax in enumerate("xy"):
                px, py = audit.argmax[j, d]
                lines += [f"audit.c{j}.max_grad_{ax} = {audit.max_grad[j, d]:.12e}",
                          f"audit.c{j}.bound_{ax} = {audit.bound[j, d]:.12e}",
                          f"audit.c{j}.at_{ax} = {px:.12g},{py:.12g}",
                          f"audit.c{j}.pass_{ax} = {str(bool(audit.passes[j, d])).lower()}"]
    return lines


def parse_report(text: str) -> dict[str, str]:
    """Inverse of the key = value layout; ignores blank lines and # comments."""
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InvalidArgument(f"malformed report line: {raw!r}")
        out[key.strip()] = value.strip()
    return out
