"""Central finite-difference oracle, independent of the tape."""

from __future__ import annotations

import numpy as np

from adasplit.autodiff import Tensor


def numeric_grad(fn, arrays: list[np.ndarray], step: float = 1e-4) -> list[np.ndarray]:
    """d fn / d arrays[k] by central differences; ``fn`` maps the arrays to a float."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = arr[i]
            arr[i] = orig + step
            fp = fn()
            arr[i] = orig - step
            fm = fn()
            arr[i] = orig
            g[i] = (fp - fm) / (2 * step)
        grads.append(g)
    return grads


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, abs_floor: float = 1e-6) -> float:
    """Largest elementwise relative error, counting entries within ``abs_floor`` as exact."""
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    ok = diff <= abs_floor
    rel = np.where(ok, 0.0, diff / np.maximum(scale, 1e-300))
    return float(rel.max()) if rel.size else 0.0


def check_tensor_fn(build, leaves: list[Tensor], step: float = 1e-4) -> float:
    """Run ``build()`` -> scalar Tensor, backprop, and compare against finite differences."""
    for t in leaves:
        t.zero_grad()
    loss = build()
    loss.backward()
    analytic = [t.grad.copy() for t in leaves]

    def f():
        return float(build().data.sum())

    numeric = numeric_grad(f, [t.data for t in leaves], step)
    return max(max_rel_error(a, n) for a, n in zip(analytic, numeric))


def kink_aware_error(analytic: list[np.ndarray], fn, arrays: list[np.ndarray], steps=(1e-5, 1e-6)) -> float:
    """Max relative error, taking per element the best of several step sizes.

    A central difference straddling a relu kink is not a derivative estimate;
    a step that avoids the kink is.
    """
    worst = 0.0
    per_step = [numeric_grad(fn, arrays, s) for s in steps]
    for k, a in enumerate(analytic):
        diffs = np.stack([np.abs(a - num[k]) for num in per_step])
        best = diffs.argmin(axis=0)
        numeric = np.choose(best, [num[k] for num in per_step])
        worst = max(worst, max_rel_error(a, numeric))
    return worst
