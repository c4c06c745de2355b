"""Run artifacts: composition and convergence CSVs, grayscale PGM images."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .mesh import Grid2D

CONVERGENCE_COLUMNS = ["iteration", "J", "J/J0", "g_m", "g_u", "g_l", "g_p", "tau", "grad_norm", "loss",
                       "rho_min", "rho_max", "partition_max_dev", "wall_time"]


def _fmt(v: float) -> str:
    # repr of a Python float round-trips exactly
    return repr(float(v))


def write_composition_csv(path, rho: np.ndarray) -> None:
    """One column per component (rho_1 .. rho_S), one row per element in grid order."""
    rho = np.atleast_2d(np.asarray(rho, float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"rho_{j + 1}" for j in range(rho.shape[1])])
        for row in rho:
            w.writerow([_fmt(v) for v in row])


def read_composition_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidArgument(f"{path}: empty composition file")
    header, body = rows[0], rows[1:]
    if not all(h == f"rho_{j + 1}" for j, h in enumerate(header)):
        raise InvalidArgument(f"{path}: unexpected header {header}")
    try:
        return np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
    except ValueError as exc:
        raise InvalidArgument(f"{path}: {exc}") from None


def write_convergence_csv(path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CONVERGENCE_COLUMNS)
        for rec in history:
            w.writerow([str(rec["iteration"])] + [_fmt(rec[c]) for c in CONVERGENCE_COLUMNS[1:]])


def read_convergence_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        out = []
        for row in reader:
            rec = {k: float(v) for k, v in row.items()}
            rec["iteration"] = int(row["iteration"])
            out.append(rec)
    return out


def write_pgm(path, values: np.ndarray, grid: Grid2D) -> None:
    """Binary 8-bit PGM of one element field; [0, 1] maps to black..white, clamped.

    Rows are written top (y = ly) to bottom so the image has the usual orientation.
    """
    v = np.asarray(values, float).reshape(grid.ny, grid.nx)[::-1]
    img = np.round(np.clip(v, 0.0, 1.0) * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{grid.nx} {grid.ny}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise InvalidArgument(f"{path}: not a binary PGM")
    nx, ny, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise InvalidArgument(f"{path}: only 8-bit PGM is supported")
    pixels = data[len(data) - nx * ny:]
    return np.frombuffer(pixels, dtype=np.uint8).reshape(ny, nx)
