"""Shared random-configuration generators for the bound tests."""

import numpy as np

from proxydml import bounds


def constant_norm_config(rng: np.random.Generator):
    """Random labelled configuration meeting the constant-norm preconditions
    (N_x > 1, alpha = 1 / (N_x N_p) <= 1), with proxy c serving class c."""
    num_classes = int(rng.integers(2, 5))
    dim = int(rng.integers(2, 6))
    n_x = float(rng.uniform(1.01, 4.0))
    n_p = float(rng.uniform(1.0 / n_x + 1e-3, 3.0))
    return bounds.random_constant_norm_config(
        rng, num_classes, int(rng.integers(2, 4)), dim, float(rng.uniform(0.0, 1.0)), n_x, n_p
    )


def free_config(rng: np.random.Generator):
    """Unconstrained points and proxies (any norms) for the Euclidean checks."""
    num_classes = int(rng.integers(2, 5))
    dim = int(rng.integers(1, 5))
    labels = np.repeat(np.arange(num_classes), int(rng.integers(2, 5)))
    proxies = rng.normal(size=(num_classes, dim)) * rng.uniform(0.5, 3.0)
    points = proxies[labels] + rng.uniform(0.0, 2.0) * rng.normal(size=(labels.size, dim))
    return bounds.BoundConfig(points, labels, proxies, labels.copy())
