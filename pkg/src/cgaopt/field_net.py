"""Band-limited multiplicative filter network (MFN) for composition fields.

The network maps coordinates x (N, d_in) to S component fractions:

    z_0 = sin(x @ omega_0.T + phi_0)
    z_i = sin(x @ omega_i.T + phi_i) * (z_{i-1} @ W_i.T + b_i),  0 < i < n_layers
    rho = z_{n_layers-1} @ W_out.T + b_out

Filter frequencies ``omega`` (rad per unit length) and phases ``phi`` are
frozen at initialization. Every output frequency is a signed sum of one row
from each filter layer, so along axis d the output is band-limited to
sum_i max|omega_i[:, d]| / 2pi <= bandwidth[d] cycles per unit length.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, InvalidArgument


@dataclass(frozen=True)
class MfnConfig:
    n_layers: int = 3
    width: int = 100
    n_out: int = 1
    bandwidth: tuple[float, ...] = (5.0, 5.0)
    seed: int = 0
    # Optional per-axis period; when set, filter frequencies snap (toward zero)
    # to multiples of 2pi/period so the field is exactly periodic over it.
    period: tuple[float, ...] | None = None

    @property
    def d_in(self) -> int:
        return len(self.bandwidth)

    def __post_init__(self):
        if self.n_layers < 1 or self.width < 1 or self.n_out < 1:
            raise InvalidArgument("n_layers, width and n_out must all be >= 1")
        if any(b < 0 for b in self.bandwidth):
            raise InvalidArgument(f"bandwidth must be non-negative, got {self.bandwidth}")
        if self.period is not None:
            if len(self.period) != self.d_in or any(p <= 0 for p in self.period):
                raise InvalidArgument(f"period must have {self.d_in} positive entries")

    def layer_budgets(self) -> np.ndarray:
        """(n_layers, d_in) per-layer bandwidths; equal split of the total."""
        return np.tile(np.asarray(self.bandwidth, float) / self.n_layers, (self.n_layers, 1))


@dataclass
class MfnParams:
    config: MfnConfig
    omega: list[np.ndarray]  # n_layers x (width, d_in), frozen
    phi: list[np.ndarray]  # n_layers x (width,), frozen
    W: list[np.ndarray]  # n_layers-1 x (width, width)
    b: list[np.ndarray]  # n_layers-1 x (width,)
    W_out: np.ndarray  # (n_out, width)
    b_out: np.ndarray  # (n_out,)

    def copy(self) -> "MfnParams":
        return MfnParams(
            self.config,
            [o.copy() for o in self.omega],
            [p.copy() for p in self.phi],
            [w.copy() for w in self.W],
            [b.copy() for b in self.b],
            self.W_out.copy(),
            self.b_out.copy(),
        )


@dataclass
class MfnGrads:
    W: list[np.ndarray]
    b: list[np.ndarray]
    W_out: np.ndarray
    b_out: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate(
            [a.ravel() for pair in zip(self.W, self.b) for a in pair] + [self.W_out.ravel(), self.b_out]
        )


def init_mfn(config: MfnConfig) -> MfnParams:
    rng = np.random.default_rng(config.seed)
    budgets = config.layer_budgets()
    d_h, d_in = config.width, config.d_in
    omega, phi = [], []
    for i in range(config.n_layers):
        wmax = 2 * np.pi * budgets[i]
        om = rng.uniform(-1.0, 1.0, size=(d_h, d_in)) * wmax
        if config.period is not None:
            step = 2 * np.pi / np.asarray(config.period, float)
            om = np.trunc(om / step) * step
        omega.append(om)
        phi.append(rng.uniform(-np.pi, np.pi, size=d_h))
    bound = 1.0 / np.sqrt(d_h)
    W = [rng.uniform(-bound, bound, size=(d_h, d_h)) for _ in range(config.n_layers - 1)]
    b = [rng.uniform(-bound, bound, size=d_h) for _ in range(config.n_layers - 1)]
    W_out = np.zeros((config.n_out, d_h))
    b_out = np.full(config.n_out, 1.0 / config.n_out)
    return MfnParams(config, omega, phi, W, b, W_out, b_out)


def _filters(params: MfnParams, coords: np.ndarray):
    args = [coords @ om.T + ph for om, ph in zip(params.omega, params.phi)]
    return args


def forward(params: MfnParams, coords: np.ndarray, cache: bool = False):
    """Evaluate the field at ``coords`` (N, d_in) -> (N, n_out).

    With ``cache=True`` also returns the intermediate activations used by
    :func:`backward`.
    """
    coords = np.atleast_2d(np.asarray(coords, float))
    sines = [np.sin(a) for a in _filters(params, coords)]
    z = sines[0]
    zs, pre = [z], []
    for i in range(1, params.config.n_layers):
        a = z @ params.W[i - 1].T + params.b[i - 1]
        z = sines[i] * a
        pre.append(a)
        zs.append(z)
    rho = z @ params.W_out.T + params.b_out
    if cache:
        return rho, {"sines": sines, "z": zs, "pre": pre}
    return rho


def backward(params: MfnParams, coords: np.ndarray, dL_drho: np.ndarray, cache=None) -> MfnGrads:
    """Reverse-mode gradient of sum(dL_drho * rho) w.r.t. the trainable weights."""
    coords = np.atleast_2d(np.asarray(coords, float))
    G = np.asarray(dL_drho, float)
    if G.shape != (coords.shape[0], params.config.n_out):
        raise InvalidArgument(
            f"dL_drho has shape {G.shape}, expected {(coords.shape[0], params.config.n_out)}"
        )
    if cache is None:
        _, cache = forward(params, coords, cache=True)
    sines, zs = cache["sines"], cache["z"]
    gW_out = G.T @ zs[-1]
    gb_out = G.sum(axis=0)
    dz = G @ params.W_out
    n = params.config.n_layers
    gW = [None] * (n - 1)
    gb = [None] * (n - 1)
    for i in range(n - 1, 0, -1):
        da = dz * sines[i]
        gW[i - 1] = da.T @ zs[i - 1]
        gb[i - 1] = da.sum(axis=0)
        dz = da @ params.W[i - 1]
    return MfnGrads(gW, gb, gW_out, gb_out)


def spatial_jacobian(params: MfnParams, coords: np.ndarray) -> np.ndarray:
    """Analytic d rho_j / d x_d, shape (N, n_out, d_in), by forward-mode tangents."""
    coords = np.atleast_2d(np.asarray(coords, float))
    args = _filters(params, coords)
    sines = [np.sin(a) for a in args]
    coses = [np.cos(a) for a in args]
    n_pts, d_in = coords.shape
    jac = np.empty((n_pts, params.config.n_out, d_in))
    for d in range(d_in):
        z = sines[0]
        dz = coses[0] * params.omega[0][:, d]
        for i in range(1, params.config.n_layers):
            a = z @ params.W[i - 1].T + params.b[i - 1]
            da = dz @ params.W[i - 1].T
            dz = coses[i] * params.omega[i][:, d] * a + sines[i] * da
            z = sines[i] * a
        jac[:, :, d] = dz @ params.W_out.T
    return jac


def n_trainable(config: MfnConfig) -> int:
    d_h, S = config.width, config.n_out
    return (config.n_layers - 1) * (d_h * d_h + d_h) + S * d_h + S


def trainable_flatten(params: MfnParams) -> np.ndarray:
    """Flat trainable vector in the order W_1, b_1, ..., W_{n-1}, b_{n-1}, W_out, b_out (row-major)."""
    parts = []
    for W, b in zip(params.W, params.b):
        parts += [W.ravel(), b]
    parts += [params.W_out.ravel(), params.b_out]
    return np.concatenate(parts)


def trainable_load(params: MfnParams, flat: np.ndarray) -> MfnParams:
    """Return a copy of ``params`` with trainable weights taken from ``flat``."""
    flat = np.asarray(flat, float)
    n = n_trainable(params.config)
    if flat.shape != (n,):
        raise InvalidArgument(f"flat vector has shape {flat.shape}, expected ({n},)")
    d_h, S = params.config.width, params.config.n_out
    out = params.copy()
    pos = 0

    def take(shape):
        nonlocal pos
        size = int(np.prod(shape))
        chunk = flat[pos:pos + size].reshape(shape).copy()
        pos += size
        return chunk

    for i in range(params.config.n_layers - 1):
        out.W[i] = take((d_h, d_h))
        out.b[i] = take((d_h,))
    out.W_out = take((S, d_h))
    out.b_out = take((S,))
    return out


# Checkpoint layout (little-endian):
#   8 bytes   magic b"CGAMFN01"
#   4 bytes   uint32 header length H
#   H bytes   UTF-8 JSON header: config fields + "n_values"
#   float64[n_values]: for each layer i: omega_i (width*d_in, row-major), phi_i (width);
#                      then trainable_flatten() order.
_MAGIC = b"CGAMFN01"


def _all_values(params: MfnParams) -> np.ndarray:
    parts = []
    for om, ph in zip(params.omega, params.phi):
        parts += [om.ravel(), ph]
    parts.append(trainable_flatten(params))
    return np.concatenate(parts)


def save_checkpoint(params: MfnParams, path) -> None:
    cfg = params.config
    values = _all_values(params)
    header = json.dumps(
        {
            "n_layers": cfg.n_layers,
            "width": cfg.width,
            "n_out": cfg.n_out,
            "bandwidth": list(cfg.bandwidth),
            "seed": cfg.seed,
            "period": None if cfg.period is None else list(cfg.period),
            "n_values": int(values.size),
        },
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(values.astype("<f8").tobytes())


def load_checkpoint(path) -> MfnParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _MAGIC:
        raise CheckpointError(f"{path}: bad magic at offset 0 (expected {_MAGIC!r}, got {blob[:8]!r})")
    if len(blob) < 12:
        raise CheckpointError(f"{path}: truncated header length at offset 8")
    (hlen,) = struct.unpack("<I", blob[8:12])
    try:
        header = json.loads(blob[12:12 + hlen].decode())
        cfg = MfnConfig(
            n_layers=header["n_layers"],
            width=header["width"],
            n_out=header["n_out"],
            bandwidth=tuple(header["bandwidth"]),
            seed=header["seed"],
            period=None if header["period"] is None else tuple(header["period"]),
        )
        n_values = header["n_values"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: unreadable header at offset 12..{12 + hlen}: {exc}") from exc
    start = 12 + hlen
    expected = start + 8 * n_values
    if len(blob) != expected:
        raise CheckpointError(
            f"{path}: payload starting at offset {start} should end at offset {expected}, file has {len(blob)} bytes"
        )
    values = np.frombuffer(blob[start:], dtype="<f8").astype(float)
    d_h, d_in = cfg.width, cfg.d_in
    per_layer = d_h * d_in + d_h
    if n_values != cfg.n_layers * per_layer + n_trainable(cfg):
        raise CheckpointError(f"{path}: n_values={n_values} inconsistent with header config")
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise CheckpointError(f"{path}: non-finite value at byte offset {start + 8 * bad}")
    omega, phi = [], []
    pos = 0
    for _ in range(cfg.n_layers):
        omega.append(values[pos:pos + d_h * d_in].reshape(d_h, d_in).copy())
        pos += d_h * d_in
        phi.append(values[pos:pos + d_h].copy())
        pos += d_h
    skeleton = MfnParams(
        cfg, omega, phi,
        [np.zeros((d_h, d_h)) for _ in range(cfg.n_layers - 1)],
        [np.zeros(d_h) for _ in range(cfg.n_layers - 1)],
        np.zeros((cfg.n_out, d_h)), np.zeros(cfg.n_out),
    )
    return trainable_load(skeleton, values[pos:])
