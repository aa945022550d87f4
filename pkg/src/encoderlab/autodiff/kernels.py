"""Kernel backend selection for the two heavy spatial ops.

``numpy`` (default) runs the in-house im2col kernels. ``torch`` routes the
forward and backward of conv2d/maxpool2d through ATen on CPU; the tape, the
op contracts and every other op stay the same. Select with
:func:`set_backend` or the ``ENCODERLAB_KERNELS`` environment variable.
"""

from __future__ import annotations

import contextlib
import os
from typing import Iterator

import numpy as np

BACKENDS = ("numpy", "torch")
_backend = os.environ.get("ENCODERLAB_KERNELS", "numpy")
_torch = None


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}, expected one of {BACKENDS}")
    if name == "torch":
        _load_torch()
    _backend = name


@contextlib.contextmanager
def use_backend(name: str) -> Iterator[None]:
    prev = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


def torch_available() -> bool:
    try:
        _load_torch()
    except ImportError:
        return False
    return True


def _load_torch():
    global _torch
    if _torch is None:
        import torch

        torch.set_num_threads(int(os.environ.get("ENCODERLAB_TORCH_THREADS", "1")))
        _torch = torch
    return _torch


def _channels_last(a: np.ndarray):
    """4-d array as a torch tensor in NHWC memory order (a view when it already is)."""
    torch = _load_torch()
    return torch.from_numpy(a.transpose(0, 2, 3, 1)).permute(0, 3, 1, 2).contiguous(
        memory_format=torch.channels_last)


def torch_conv2d(x: np.ndarray, w: np.ndarray, b, stride: int, padding: int, groups: int):
    # channels-last activations take the faster oneDNN paths; outputs stay channels-last
    torch = _load_torch()
    tx, tw = _channels_last(x), torch.from_numpy(np.ascontiguousarray(w))
    tb = None if b is None else torch.from_numpy(np.ascontiguousarray(b))
    with torch.no_grad():
        out = torch.nn.functional.conv2d(tx, tw, tb, stride=stride, padding=padding, groups=groups)

    def backward(g: np.ndarray, need_x: bool, need_w: bool):
        tg = _channels_last(g)
        gx, gw, gb = torch.ops.aten.convolution_backward(
            tg, tx, tw, None if tb is None else [tw.shape[0]], [stride, stride], [padding, padding],
            [1, 1], False, [0, 0], groups, [need_x, need_w, tb is not None])
        return (None if gx is None else gx.numpy(),
                None if gw is None else np.ascontiguousarray(gw.numpy()),
                None if gb is None else gb.numpy())

    return out.numpy(), backward


def torch_maxpool2d(x: np.ndarray, k: int, stride: int, padding: int):
    torch = _load_torch()
    tx = _channels_last(x)
    with torch.no_grad():
        out, idx = torch.ops.aten.max_pool2d_with_indices(tx, [k, k], [stride, stride], [padding, padding])

    def backward(g: np.ndarray) -> np.ndarray:
        tg = _channels_last(g)
        gx = torch.ops.aten.max_pool2d_with_indices_backward(
            tg, tx, [k, k], [stride, stride], [padding, padding], [1, 1], False, idx)
        return gx.numpy()

    return out.numpy(), backward
