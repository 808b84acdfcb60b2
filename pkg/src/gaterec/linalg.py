"""Small dense numeric helpers used by the model and its tests.

Plain numpy throughout. float64 is the working precision for tests and
gradient checks; training may downcast to float32 via ParameterSet.
"""

import numpy as np

from .errors import NumericError


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape check."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d arrays, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def softmax(v: np.ndarray) -> np.ndarray:
    """Stable softmax of a vector (max-subtraction). -inf entries get weight 0."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"softmax expects a non-empty vector, got shape {v.shape}")
    shifted = v - v.max()
    e = np.exp(shifted)
    return e / e.sum()


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax; each row must have at least one finite entry."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] == 0:
        raise ValueError(f"softmax_rows expects a matrix with >= 1 column, got shape {m.shape}")
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form stays stable for large |x|
    return 0.5 * (np.tanh(0.5 * np.asarray(x)) + 1.0)


def ensure_finite(name: str, arr: np.ndarray) -> np.ndarray:
    """Raise NumericError naming `name` if `arr` contains NaN/Inf."""
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {name}")
    return arr
