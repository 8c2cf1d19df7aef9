from __future__ import annotations

from typing import Callable, Iterable

import numpy as np


def finite_diff_grad(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    step: float = 1e-5,
    indices: Iterable[tuple[int, ...]] | None = None,
) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``.

    With ``indices`` only those entries are perturbed; the rest stay zero.
    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    if indices is None:
        indices = np.ndindex(*x.shape)
    for idx in indices:
        orig = x[idx]
        x[idx] = orig + step
        hi = float(f(x))
        x[idx] = orig - step
        lo = float(f(x))
        x[idx] = orig
        grad[idx] = (hi - lo) / (2.0 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``max|a - b| / max(1, max|b|)``."""
    a, b = np.asarray(a), np.asarray(b)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


def activation_pattern(graph) -> bytes:
    """Fingerprint of every relu on/off decision and max-pool winner in ``graph``.

    Two evaluations with equal fingerprints lie on the same smooth piece of the
    function, so a finite difference between them is free of kink artefacts.
    """
    parts = []
    for node in graph.nodes:
        if node.op == "relu":
            parts.append(np.packbits(graph.nodes[node.inputs[0]].value > 0).tobytes())
        elif node.op == "maxpool2d":
            parts.append(_pool_winners(graph.nodes[node.inputs[0]].value, node.meta["window"]))
    return b"".join(parts)


def _pool_winners(x: np.ndarray, window: tuple[int, int]) -> bytes:
    ph, pw = window
    ho, wo = x.shape[-2] // ph, x.shape[-1] // pw
    lead = x.shape[:-2]
    blocks = x[..., : ho * ph, : wo * pw].reshape(*lead, ho, ph, wo, pw)
    blocks = np.moveaxis(blocks, -3, -2).reshape(*lead, ho, wo, ph * pw)
    return blocks.argmax(axis=-1).astype(np.int8).tobytes()
