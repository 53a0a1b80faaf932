"""Shared oracles for the test suite."""

import numpy as np

from probsurf.network import NetworkSpec, Preconditioner, forward


def fd_gradient(spec, precond, theta, X, coeffs, step=1e-5):
    """Central finite differences of sum_i coeffs_i f(X_i) with respect to theta."""
    g = np.empty_like(theta)
    for k in range(theta.size):
        tp = theta.copy()
        tm = theta.copy()
        tp[k] += step
        tm[k] -= step
        g[k] = (coeffs @ forward(spec, precond, tp, X) - coeffs @ forward(spec, precond, tm, X)) / (2 * step)
    return g


def rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


SPEC_VARIANTS = [
    dict(topology="fully_connected", width=5, num_layers=3),
    dict(topology="fully_connected", width=4, num_layers=4, activation="tanh"),
    dict(topology="fully_connected", width=4, num_layers=3, activation="relu"),
    dict(topology="block_diagonal", num_blocks=2, block_size=3, num_layers=4),
    dict(topology="block_diagonal", num_blocks=3, block_size=2, num_layers=4, shortcuts=True),
    dict(topology="block_diagonal", num_blocks=2, block_size=2, num_layers=3, output_transform="bounded", h_min=-2.0, h_max=3.0),
    dict(topology="fully_connected", width=4, num_layers=4, shortcuts=True, activation="tanh"),
    dict(topology="block_diagonal", num_blocks=2, block_size=3, num_layers=5, activation="tanh", shortcuts=True,
         output_transform="bounded", h_min=-1.0, h_max=1.0),
    dict(topology="fully_connected", num_layers=1),
    dict(topology="block_diagonal", num_blocks=2, block_size=2, num_layers=2),
]


def random_probe(rng, variant, dim=2, batch=4):
    spec = NetworkSpec(input_dim=dim, **variant)
    theta = rng.normal(0.0, 0.6, spec.n_params)
    X = rng.normal(size=(batch, dim))
    precond = Preconditioner(rng.normal(size=dim), rng.uniform(0.5, 2.0, dim), lambda Z: -0.5 * np.sum(Z * Z, axis=1))
    coeffs = rng.normal(size=batch)
    return spec, precond, theta, X, coeffs
