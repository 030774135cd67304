import logging
from collections.abc import Callable

import numpy as np

logger = logging.getLogger(__name__)


def central_difference(
    func: Callable[[np.ndarray], float], x0: np.ndarray, eps: float = 1e-6
) -> np.ndarray:
    """
    Centered finite difference gradient of func at x0 (any shape).
    Returns an array shaped like x0
    """
    x0 = np.asarray(x0, dtype=float)
    flat = x0.ravel().copy()
    grad = np.zeros(flat.size)
    for j in range(flat.size):
        x = flat.copy()
        x[j] = flat[j] + eps
        fplus = func(x.reshape(x0.shape))
        x[j] = flat[j] - eps
        fminus = func(x.reshape(x0.shape))
        grad[j] = (fplus - fminus) / (2 * eps)
    return grad.reshape(x0.shape)


def max_relative_error(
    analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-7
) -> float:
    """max |a - n| / max(|n|, atol) over all entries"""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.abs(numeric), atol)
    return float(np.max(np.abs(analytic - numeric) / denom)) if numeric.size else 0.0


def check_gradient(
    func: Callable[[np.ndarray], float],
    grad: np.ndarray,
    x0: np.ndarray,
    eps: float = 1e-6,
    rtol: float = 1e-5,
    atol: float = 1e-7,
) -> tuple[bool, float]:
    """
    Compares an analytic gradient to central differences.
    Entries pass if |a - n| <= rtol*|n| + atol
    """
    numeric = central_difference(func, x0, eps)
    grad = np.asarray(grad, dtype=float)
    ok = bool(np.all(np.abs(grad - numeric) <= rtol * np.abs(numeric) + atol))
    err = max_relative_error(grad, numeric, atol)
    if not ok:
        logger.debug(f"Gradient check failed, max relative error {err:.3e}")
    return ok, err
