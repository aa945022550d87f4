"""Weight initialisers."""

from __future__ import annotations

import numpy as np


def orthogonal(shape, gain: float, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """(Semi-)orthogonal matrix reshaped to ``shape``; conv kernels are flattened per output channel."""
    rows = shape[0]
    cols = int(np.prod(shape[1:]))
    a = rng.standard_normal((rows, cols))
    if rows < cols:
        a = a.T
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return (gain * q).reshape(shape).astype(dtype)
