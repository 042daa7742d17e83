"""Matrix-free conjugate gradients over a batch of independent right-hand sides."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class ConvergenceError(RuntimeError):
    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True)
class CGInfo:
    iterations: int
    residual: float  # worst relative residual over the batch


def cg(
    apply: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    ndim: int | None = None,
    rtol: float = 1e-10,
    maxiter: int | None = None,
    x0: np.ndarray | None = None,
) -> tuple[np.ndarray, CGInfo]:
    """Solve ``apply(x) = b`` for a symmetric positive definite operator.

    The first ``ndim`` axes of ``b`` index the unknowns; any trailing axes
    are independent columns.  Each column stops updating once its own
    residual drops below ``rtol * |b|``, so a column's result does not depend
    on what else was batched with it.
    """
    b = np.asarray(b, dtype=float)
    if ndim is None:
        ndim = b.ndim
    axes = tuple(range(ndim))
    unknowns = int(np.prod(b.shape[:ndim]))
    if maxiter is None:
        maxiter = 10 * unknowns
    pad = (1,) * ndim

    def dot(u, v):
        return np.sum(u * v, axis=axes)

    bnorm = np.sqrt(dot(b, b))
    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = np.array(x0, dtype=float)
        r = b - apply(x)
    p = r.copy()
    rr = dot(r, r)
    target = rtol * bnorm
    active = np.sqrt(rr) > target
    it = 0
    while np.any(active):
        if it >= maxiter:
            worst = float(np.max(np.sqrt(rr) / np.where(bnorm > 0, bnorm, 1.0)))
            raise ConvergenceError(
                f"CG did not converge in {maxiter} iterations (relative residual {worst:.3e})",
                iterations=it,
                residual=worst,
            )
        Ap = apply(p)
        pAp = dot(p, Ap)
        alpha = np.divide(rr, pAp, out=np.zeros_like(rr), where=active & (pAp != 0))
        x = x + alpha.reshape(pad + alpha.shape) * p
        r = r - alpha.reshape(pad + alpha.shape) * Ap
        rr_new = dot(r, r)
        active = active & (np.sqrt(rr_new) > target)
        beta = np.divide(rr_new, rr, out=np.zeros_like(rr), where=active)
        p = np.where(active.reshape(pad + active.shape), r + beta.reshape(pad + beta.shape) * p, p)
        rr = rr_new
        it += 1
    rel = np.sqrt(dot(r, r)) / np.where(bnorm > 0, bnorm, 1.0)
    return x, CGInfo(it, float(np.max(rel)) if rel.size else 0.0)
