"""Central finite differences, the independent oracle for ``backward``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from .tensor import Tensor, no_grad


def finite_difference_grad(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    indices: Optional[Iterable[int]] = None,
) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``.

    ``indices`` restricts evaluation to the given flat positions (the rest of
    the result stays zero), which keeps checks on large inputs affordable.
    ``x.data`` is perturbed in place and restored, so ``f`` may close over
    ``x`` itself (useful when ``x`` is a model parameter).
    """
    if x.dtype != np.float64:
        raise TypeError("finite differences are only meaningful in float64")
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    positions = range(flat.size) if indices is None else indices
    with no_grad():
        for i in positions:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(x).data)
            flat[i] = orig - h
            fm = float(f(x).data)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
    return grad


def kink_mask(coarse: np.ndarray, fine: np.ndarray, tol: float) -> np.ndarray:
    """Coordinates where central differences at h and h/2 disagree.

    On a smooth function the two differ by a term of order h^2 times the
    third derivative, far below ``tol``. A ReLU-type unit switching sides
    inside [x - h, x + h] shifts the two quotients by different fractions of
    its slope jump. The tolerance is relative to the larger infinity norm,
    like :func:`max_relative_error`.
    """
    scale = max(np.abs(coarse).max(initial=0.0), np.abs(fine).max(initial=0.0))
    return np.abs(coarse - fine) > tol * scale


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, indices=None) -> float:
    """Largest elementwise deviation, relative to the gradient's overall scale.

    Per-element relative error explodes on entries that are zero up to
    cancellation noise, so the denominator is the larger of the two
    infinity norms.
    """
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if indices is not None:
        idx = np.fromiter(indices, dtype=np.int64)
        a, n = a[idx], n[idx]
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - n).max() / scale)


@dataclass
class GradCheckReport:
    worst: float
    checked: int
    skipped_kinks: int


def check_gradients(
    f: Callable[[Tensor], Tensor],
    inputs: list[Tensor],
    h: float = 1e-5,
    max_checks: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    kink_tol: Optional[float] = None,
    report: bool = False,
):
    """Compare ``backward`` against finite differences for every tensor in ``inputs``.

    ``f`` is called with the first input and must read any others by closure.
    Returns the worst relative error seen. With ``max_checks`` set, at most
    that many randomly chosen coordinates per tensor are differenced.

    ``kink_tol`` excludes coordinates that straddle a non-differentiable
    point (see :func:`kink_mask`), at the cost of a second differencing
    pass. With ``report`` a :class:`GradCheckReport` carrying the number of
    excluded coordinates is returned instead of the bare error.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for t in inputs:
        t.grad = None
    loss = f(inputs[0])
    loss.backward()
    worst, checked, skipped = 0.0, 0, 0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros(t.shape)
        idx = np.arange(t.data.size)
        if max_checks is not None and t.data.size > max_checks:
            idx = np.sort(rng.choice(t.data.size, size=max_checks, replace=False))
        numeric = finite_difference_grad(lambda _: f(inputs[0]), t, h, idx)
        if kink_tol is not None:
            fine = finite_difference_grad(lambda _: f(inputs[0]), t, h / 2, idx)
            kinked = kink_mask(numeric.reshape(-1)[idx], fine.reshape(-1)[idx], kink_tol)
            skipped += int(kinked.sum())
            idx = idx[~kinked]
        checked += idx.size
        if idx.size:
            worst = max(worst, max_relative_error(analytic, numeric, idx))
    return GradCheckReport(worst, checked, skipped) if report else worst
