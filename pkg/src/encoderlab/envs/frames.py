"""Binary PPM/PGM writers for frame dumps and heatmaps."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def write_ppm(path, obs: np.ndarray) -> None:
    """Write a (3, H, W) uint8 frame as binary P6."""
    obs = np.asarray(obs)
    if obs.ndim != 3 or obs.shape[0] != 3 or obs.dtype != np.uint8:
        raise ValueError(f"expected uint8 (3, H, W), got {obs.dtype} {obs.shape}")
    _, h, w = obs.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(obs.transpose(1, 2, 0)).tobytes())


def write_pgm(path, img: np.ndarray) -> None:
    """Write a (H, W) uint8 image as binary P5."""
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError(f"expected uint8 (H, W), got {img.dtype} {img.shape}")
    h, w = img.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes())


def read_pnm(path) -> np.ndarray:
    """Read a binary P5/P6 file back; P6 returns (3, H, W), P5 returns (H, W)."""
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255 or magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported header {magic!r} maxval {maxval}")
    payload = data[pos + 1:]  # exactly one whitespace byte after maxval
    if magic == b"P6":
        return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).transpose(2, 0, 1).copy()
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()
