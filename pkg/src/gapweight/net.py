"""Smooth feedforward network: parameters, initialization, forward pass, exact gradient.

The network maps a unit-norm input x in R^d to a scalar

    f(theta; x) = (1/sqrt(m)) v^T alpha_L,
    alpha_1 = phi((1/sqrt(d)) W_1 x),
    alpha_l = phi((1/sqrt(m)) W_l alpha_{l-1})   for l = 2..L,

with a smooth Lipschitz activation phi (tanh by default).  Parameters are
stored as one flat float64 vector in a fixed layout: each hidden matrix
row-major, layers in order, output vector last.  That layout is load-bearing:
perturbation sign streams index into it, so it must never change.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericError, ShapeMismatchError

# Activations are (value, derivative) pairs.  Both must be Lipschitz with
# bounded second derivative; phi(0) = 0 keeps zero inputs inert.
_ACTIVATIONS = {
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
    # softplus shifted down by log 2 so that phi(0) = 0
    "softplus0": (
        lambda z: np.logaddexp(0.0, z) - np.log(2.0),
        lambda z: 1.0 / (1.0 + np.exp(-z)),
    ),
}


def activation_pair(name: str):
    try:
        return _ACTIVATIONS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown activation {name!r}; choose from {sorted(_ACTIVATIONS)}"
        ) from None


@dataclass(frozen=True)
class NetDims:
    """Architecture sizes: input dim d, width m, depth L (hidden layers)."""

    d: int
    m: int
    L: int

    def __post_init__(self):
        if self.d < 1 or self.m < 1 or self.L < 1:
            raise ConfigurationError(
                f"network dims must be >= 1, got d={self.d} m={self.m} L={self.L}"
            )

    @property
    def p(self) -> int:
        """Total parameter count m*d + (L-1)*m^2 + m."""
        return self.m * self.d + (self.L - 1) * self.m * self.m + self.m

    def layer_shapes(self) -> list[tuple[int, int]]:
        return [(self.m, self.d)] + [(self.m, self.m)] * (self.L - 1)

    def layer_slices(self) -> list[slice]:
        """Flat-vector slices: hidden layers in order, then the output vector."""
        slices, off = [], 0
        for rows, cols in self.layer_shapes():
            slices.append(slice(off, off + rows * cols))
            off += rows * cols
        slices.append(slice(off, off + self.m))
        return slices


@dataclass
class NetworkParams:
    """Layered parameters (or a gradient in the same layout) over one flat buffer.

    Used both for the parameter point theta and for gradients with respect to
    it; the shared layout is what makes flat-vector arithmetic on the two
    meaningful.
    """

    flat: np.ndarray
    dims: NetDims
    activation: str = "tanh"

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.dims.p,):
            raise ShapeMismatchError(
                f"flat buffer has shape {self.flat.shape}, expected ({self.dims.p},)"
            )

    # --- views ---------------------------------------------------------
    def hidden(self, l: int) -> np.ndarray:
        """Weight matrix of hidden layer l (1-based), as a view."""
        if not 1 <= l <= self.dims.L:
            raise ShapeMismatchError(f"layer index {l} outside 1..{self.dims.L}")
        sl = self.dims.layer_slices()[l - 1]
        return self.flat[sl].reshape(self.dims.layer_shapes()[l - 1])

    @property
    def v(self) -> np.ndarray:
        """Output-layer vector, as a view."""
        return self.flat[self.dims.layer_slices()[-1]]

    # --- vector-space operations ("flat ops") --------------------------
    def copy(self) -> "NetworkParams":
        return NetworkParams(self.flat.copy(), self.dims, self.activation)

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams(np.zeros(self.dims.p), self.dims, self.activation)

    def add_scaled(self, alpha: float, other: "NetworkParams") -> "NetworkParams":
        """Return self + alpha * other (axpy)."""
        self._check_layout(other)
        return NetworkParams(self.flat + alpha * other.flat, self.dims, self.activation)

    def scaled(self, alpha: float) -> "NetworkParams":
        return NetworkParams(alpha * self.flat, self.dims, self.activation)

    def dot(self, other: "NetworkParams") -> float:
        self._check_layout(other)
        return float(self.flat @ other.flat)

    def norm(self) -> float:
        return float(np.linalg.norm(self.flat))

    def layer_norms(self, reference: "NetworkParams | None" = None) -> np.ndarray:
        """Per-block L2 norms (L hidden layers then v), optionally of self - reference."""
        base = self.flat if reference is None else self.flat - reference.flat
        if reference is not None:
            self._check_layout(reference)
        return np.array(
            [float(np.linalg.norm(base[sl])) for sl in self.dims.layer_slices()]
        )

    def _check_layout(self, other: "NetworkParams"):
        if other.dims != self.dims:
            raise ShapeMismatchError(
                f"layout mismatch: {other.dims} vs {self.dims}"
            )


@dataclass(frozen=True)
class NetworkConfig:
    """Everything needed to build a fresh network of a given shape."""

    d: int
    m: int
    L: int
    sigma1: float = 1.0
    activation: str = "tanh"

    def dims(self) -> NetDims:
        return NetDims(self.d, self.m, self.L)


@dataclass(frozen=True)
class InitSnapshot:
    """Frozen record of the initialization: theta0, its scale, and the seed."""

    theta0: NetworkParams
    sigma1: float
    seed: int

    def __post_init__(self):
        # Freeze theta0 so later iterates cannot mutate the anchor point.
        self.theta0.flat.setflags(write=False)


def sigma0_for_width(m: int, sigma1: float) -> float:
    """Entry-wise init std sigma1 / (2 (1 + sqrt(log m) / sqrt(2 m)))."""
    return sigma1 / (2.0 * (1.0 + np.sqrt(np.log(m)) / np.sqrt(2.0 * m)))


def init_params(d: int, m: int, L: int, sigma1: float, seed: int,
                activation: str = "tanh") -> InitSnapshot:
    """Draw theta0: hidden entries i.i.d. N(0, sigma0^2), v0 uniform on the unit sphere.

    Deterministic for a given seed; the same seed always yields bit-identical
    parameters.
    """
    if sigma1 <= 0:
        raise ConfigurationError(f"sigma1 must be positive, got {sigma1}")
    activation_pair(activation)  # validate early
    dims = NetDims(d, m, L)
    sigma0 = sigma0_for_width(m, sigma1)
    rng = np.random.Generator(np.random.Philox(key=np.random.SeedSequence(seed).generate_state(1, dtype=np.uint64)[0]))
    flat = np.empty(dims.p)
    slices = dims.layer_slices()
    for sl in slices[:-1]:
        flat[sl] = rng.standard_normal(sl.stop - sl.start) * sigma0
    v = rng.standard_normal(m)
    flat[slices[-1]] = v / np.linalg.norm(v)
    theta0 = NetworkParams(flat, dims, activation)
    return InitSnapshot(theta0=theta0, sigma1=sigma1, seed=seed)


def init_from_config(cfg: NetworkConfig, seed: int) -> InitSnapshot:
    return init_params(cfg.d, cfg.m, cfg.L, cfg.sigma1, seed, cfg.activation)


def _layer_pass(params: NetworkParams, x: np.ndarray):
    """Run the recurrence, returning pre-activations and activations per layer."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.dims.d,):
        raise ShapeMismatchError(
            f"input has shape {x.shape}, expected ({params.dims.d},)"
        )
    phi, _ = activation_pair(params.activation)
    pre, act = [], []
    h = x
    for l in range(1, params.dims.L + 1):
        scale = 1.0 / np.sqrt(params.dims.d if l == 1 else params.dims.m)
        z = scale * (params.hidden(l) @ h)
        h = phi(z)
        pre.append(z)
        act.append(h)
    return pre, act


def forward(params: NetworkParams, x: np.ndarray) -> float:
    """Evaluate f(theta; x)."""
    _, act = _layer_pass(params, x)
    out = float(params.v @ act[-1]) / np.sqrt(params.dims.m)
    if not np.isfinite(out):
        raise NumericError(f"network output is not finite: {out}")
    return out


def backward(params: NetworkParams, x: np.ndarray) -> NetworkParams:
    """Exact gradient of f(theta; x) with respect to theta, by reverse mode."""
    x = np.asarray(x, dtype=np.float64)
    pre, act = _layer_pass(params, x)
    _, dphi = activation_pair(params.activation)
    dims = params.dims
    grad = np.empty(dims.p)
    slices = dims.layer_slices()
    sqrt_m = np.sqrt(dims.m)

    grad[slices[-1]] = act[-1] / sqrt_m
    # delta_l = d f / d z_l, backpropagated from the output layer
    delta = (params.v / sqrt_m) * dphi(pre[-1])
    for l in range(dims.L, 0, -1):
        below = x if l == 1 else act[l - 2]
        scale = 1.0 / np.sqrt(dims.d if l == 1 else dims.m)
        grad[slices[l - 1]] = (scale * np.outer(delta, below)).ravel()
        if l > 1:
            delta = scale * (params.hidden(l).T @ delta) * dphi(pre[l - 2])
    if not np.all(np.isfinite(grad)):
        raise NumericError("gradient contains non-finite entries")
    return NetworkParams(grad, dims, params.activation)
