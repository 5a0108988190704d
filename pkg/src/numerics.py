import math
from typing import Tuple

import numpy as np


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_counts(n: int, fractions: Tuple[float, float, float] = (0.8, 0.1, 0.1)) -> Tuple[int, int, int]:
    """Train/validation/test sizes; the test share absorbs rounding."""
    n_train = round_half_up(n * fractions[0])
    n_val = min(round_half_up(n * fractions[1]), n - n_train)
    return n_train, n_val, n - n_train - n_val


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def bce_from_logit(z: float, label: float) -> float:
    # softplus(z) - y*z, finite for any finite z
    return float(np.logaddexp(0.0, z)) - label * z


def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def leaky_relu_grad(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, 1.0, slope)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def gaussian_pdf(x: float, mean: float, std: float) -> float:
    return math.exp(-((x - mean) ** 2) / (2.0 * std * std)) / (math.sqrt(2.0 * math.pi) * std)
