"""Triplet and association losses with their analytic gradients.

Distances are Euclidean on raw map outputs; no normalization anywhere. The
hinge and both distance terms use the subgradient convention that a zero
distance (or an inactive hinge) contributes an exactly-zero gradient.
"""

from __future__ import annotations

import numpy as np


def _check_finite(name: str, *vectors: np.ndarray) -> None:
    for v in vectors:
        if not np.isfinite(v).all():
            raise ValueError(f"{name}: non-finite input")


def triplet_loss(
    a: np.ndarray, p: np.ndarray, n: np.ndarray, margin: float
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Hinge on d(a,p) - d(a,n) + margin.

    Returns (loss, grad_a, grad_p, grad_n). Inactive hinge (d(a,n) >= d(a,p)
    + margin) gives loss 0 and exactly-zero gradients; a zero distance zeroes
    that term's gradient.
    """
    a, p, n = (np.asarray(x, dtype=float) for x in (a, p, n))
    _check_finite("triplet_loss", a, p, n)
    d_ap = float(np.linalg.norm(a - p))
    d_an = float(np.linalg.norm(a - n))
    raw = d_ap - d_an + margin
    zero = np.zeros_like(a)
    if raw <= 0.0:
        return 0.0, zero, zero.copy(), zero.copy()
    u_ap = (a - p) / d_ap if d_ap > 0.0 else zero
    u_an = (a - n) / d_an if d_an > 0.0 else zero
    return raw, u_ap - u_an, -u_ap, u_an


def association_loss(v_cur: np.ndarray, v_next: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error pulling the current embedding toward a later one.

    Returns (loss, grad w.r.t. v_cur); v_next is a constant target, so no
    gradient is reported for it.
    """
    v_cur, v_next = (np.asarray(x, dtype=float) for x in (v_cur, v_next))
    _check_finite("association_loss", v_cur, v_next)
    diff = v_cur - v_next
    return float(np.mean(diff * diff)), (2.0 / len(v_cur)) * diff
