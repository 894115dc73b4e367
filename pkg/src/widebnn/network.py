"""Finite-width fully connected Bayesian network.

Configuration, prior sampling under the standard and NTK parametrisations,
forward evaluation, and an exact function-space prior sampler that avoids
materialising weight matrices for very wide networks.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np
import scipy.special

from .errors import DimensionMismatch
from .numkit import GaussianStream, as_matrix, cholesky

__all__ = [
    "NetworkConfig",
    "ParameterSet",
    "nonlinearity_fn",
    "sample_prior",
    "forward",
    "reparametrise",
    "prior_function_draws",
]

NONLINEARITIES = ("erf", "relu", "identity")
PARAMETRISATIONS = ("standard", "ntk")


def nonlinearity_fn(name: str):
    if name == "erf":
        return scipy.special.erf
    if name == "relu":
        return lambda x: np.maximum(x, 0.0)
    if name == "identity":
        return lambda x: x
    raise ValueError(f"unknown nonlinearity {name!r}")


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture and prior scales of a fully connected BNN.

    ``depth`` counts hidden layers; the network has ``depth + 1`` weight
    matrices. All hidden layers share ``hidden_width``. Defaults
    sigma_w**2 = 2.0 and sigma_b**2 = 0.1 keep the deep erf kernel
    non-degenerate.
    """

    depth: int
    input_dim: int
    output_dim: int
    hidden_width: int
    sigma_w: float = float(np.sqrt(2.0))
    sigma_b: float = float(np.sqrt(0.1))
    nonlinearity: str = "erf"
    parametrisation: str = "standard"

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if min(self.input_dim, self.output_dim, self.hidden_width) < 1:
            raise ValueError("all dimensions must be >= 1")
        if not self.sigma_w > 0:
            raise ValueError("sigma_w must be > 0")
        if self.sigma_b < 0:
            raise ValueError("sigma_b must be >= 0")
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"nonlinearity must be one of {NONLINEARITIES}")
        if self.parametrisation not in PARAMETRISATIONS:
            raise ValueError(f"parametrisation must be one of {PARAMETRISATIONS}")

    @property
    def layer_dims(self) -> List[int]:
        """Unit counts per layer, input through output."""
        return [self.input_dim] + [self.hidden_width] * self.depth + [self.output_dim]

    @property
    def layer_shapes(self) -> List[tuple]:
        dims = self.layer_dims
        return [(dims[l + 1], dims[l]) for l in range(len(dims) - 1)]

    @property
    def n_params(self) -> int:
        return sum(o * i + o for (o, i) in self.layer_shapes)

    def with_width(self, width: int) -> "NetworkConfig":
        return replace(self, hidden_width=width)


@dataclass
class ParameterSet:
    """Per-layer weights and biases of one network draw."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise DimensionMismatch("weights and biases must pair up per layer")


def _split_flat(flat: np.ndarray, config: NetworkConfig) -> ParameterSet:
    """Layer-major, weights (row-major) then bias, per the draw-order contract."""
    weights, biases, off = [], [], 0
    for (out_d, in_d) in config.layer_shapes:
        w = flat[off:off + out_d * in_d].reshape(out_d, in_d)
        off += out_d * in_d
        b = flat[off:off + out_d]
        off += out_d
        weights.append(w)
        biases.append(b)
    return ParameterSet(weights, biases)


def sample_prior(config: NetworkConfig, stream: GaussianStream) -> ParameterSet:
    """Draw one parameter set from the prior.

    Standard parametrisation stores weights with variance sigma_w**2 / fan_in
    and biases with variance sigma_b**2; under the NTK parametrisation every
    stored entry is N(0, 1) and the scaling happens in :func:`forward`.
    """
    flat = stream.normal(config.n_params)
    params = _split_flat(flat, config)
    if config.parametrisation == "standard":
        dims = config.layer_dims
        for l, (w, b) in enumerate(zip(params.weights, params.biases)):
            w *= config.sigma_w / np.sqrt(dims[l])
            b *= config.sigma_b
    return params


def forward(params: ParameterSet, config: NetworkConfig, x) -> np.ndarray:
    """Evaluate the network on a batch of inputs (rows).

    The nonlinearity is applied to hidden layers only, never to the output
    layer.
    """
    h = as_matrix(x, "X")
    if h.shape[1] != config.input_dim:
        raise DimensionMismatch(
            f"inputs have {h.shape[1]} columns, expected {config.input_dim}"
        )
    if len(params.weights) != config.depth + 1:
        raise DimensionMismatch("parameter set does not match config depth")
    phi = nonlinearity_fn(config.nonlinearity)
    ntk = config.parametrisation == "ntk"
    dims = config.layer_dims
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        if w.shape != (dims[l + 1], dims[l]):
            raise DimensionMismatch(
                f"layer {l} weights have shape {w.shape}, expected {(dims[l + 1], dims[l])}"
            )
        if l > 0:
            h = phi(h)
        if ntk:
            h = (config.sigma_w / np.sqrt(dims[l])) * (h @ w.T) + config.sigma_b * b
        else:
            h = h @ w.T + b
    return h


def reparametrise(params_ntk: ParameterSet, config: NetworkConfig) -> ParameterSet:
    """Fold the NTK forward scaling into the stored parameters.

    The returned set evaluated under the standard convention equals the input
    evaluated under the NTK convention, exactly.
    """
    dims = config.layer_dims
    weights = [
        w * (config.sigma_w / np.sqrt(dims[l]))
        for l, w in enumerate(params_ntk.weights)
    ]
    biases = [b * config.sigma_b for b in params_ntk.biases]
    return ParameterSet(weights, biases)


def layer_cov(phi_units_by_points: np.ndarray, fan_in: int,
              sigma_w: float, sigma_b: float) -> np.ndarray:
    """Cross-point covariance of one unit's next-layer preactivation.

    Given activations of the previous layer (units x points), each unit of
    the next layer is, conditionally, a zero-mean Gaussian over points with
    this covariance; the bias contributes a constant sigma_b**2 offset.
    """
    g = phi_units_by_points
    return (sigma_w ** 2 / fan_in) * (g.T @ g) + sigma_b ** 2


def prior_function_draws(
    config: NetworkConfig,
    x,
    n_draws: int,
    stream: GaussianStream,
    batch_size: Optional[int] = None,
) -> np.ndarray:
    """Exact samples of network outputs at fixed points under the prior.

    Instead of materialising weight matrices, each layer's activations at the
    requested points are drawn from their exact conditional Gaussian given the
    previous layer (rows of the preactivation matrix are i.i.d. across units).
    The returned array has shape ``(n_draws, n_points, output_dim)`` and is
    equal in distribution to ``forward(sample_prior(...), config, x)``.
    """
    pts = as_matrix(x, "X")
    if pts.shape[1] != config.input_dim:
        raise DimensionMismatch(
            f"inputs have {pts.shape[1]} columns, expected {config.input_dim}"
        )
    m = pts.shape[0]
    d = config.hidden_width
    phi = nonlinearity_fn(config.nonlinearity)
    if batch_size is None:
        batch_size = max(1, int(4_000_000 // max(d * m, 1)))

    c1 = layer_cov(pts.T, config.input_dim, config.sigma_w, config.sigma_b)
    l1 = cholesky(c1 + 1e-12 * (np.trace(c1) / m + 1.0) * np.eye(m))

    out = np.empty((n_draws, m, config.output_dim))
    done = 0
    while done < n_draws:
        b = min(batch_size, n_draws - done)
        if config.depth == 0:
            f = stream.normal(b * config.output_dim * m).reshape(b, config.output_dim, m)
            f = f @ l1.T
        else:
            f = stream.normal(b * d * m).reshape(b, d, m) @ l1.T
            for _ in range(config.depth - 1):
                f = _next_layer(f, phi, config, stream, b, d, m)
            f = _next_layer(f, phi, config, stream, b, config.output_dim, m)
        out[done:done + b] = np.swapaxes(f, 1, 2)
        done += b
    return out


def _next_layer(f, phi, config, stream, b, out_units, m):
    g = phi(f)
    d_in = f.shape[1]
    cov = (config.sigma_w ** 2 / d_in) * (np.swapaxes(g, 1, 2) @ g)
    cov += config.sigma_b ** 2
    tr = np.trace(cov, axis1=1, axis2=2)
    cov += (1e-12 * (tr / m + 1.0))[:, None, None] * np.eye(m)
    low = np.linalg.cholesky(cov)
    e = stream.normal(b * out_units * m).reshape(b, out_units, m)
    return e @ np.swapaxes(low, 1, 2)
