"""Sign-perturbed predictor, its multi-draw average, and averaged losses with gradients.

The predictor adds a random linear ridge to the network output:

    f_tilde(theta; x, eps) = f(theta; x) + c_p * <theta - theta0, eps> / m^(1/4)

with eps a vector of p i.i.d. +-1 signs.  S independent draws are averaged.
Draws are stored as counter-based generator seeds and regenerated on use, so
a PerturbationSet stays tiny even when p runs into the millions; for small
problems a transparent cache keeps the hot loops on BLAS matvecs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError, NumericError
from .net import InitSnapshot, NetworkParams, backward, forward

# Materialize the S x p sign matrix only below this entry count (~64 MB).
_MAX_CACHED_ENTRIES = 8_388_608

_LOG_FLOOR = 1e-300


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def square_loss(y: float, yhat: float) -> float:
    return 0.5 * (y - yhat) ** 2


def kl_loss_prob(y: float, q):
    """Binary KL divergence between label y and predicted probability q (scalar or vector)."""
    q = np.asarray(q, dtype=np.float64)
    if np.any(q <= 0.0) or np.any(q >= 1.0):
        raise DomainError("predicted probability outside (0, 1)")
    out = np.zeros_like(q)
    if y > 0.0:
        out = out + y * np.log(max(y, _LOG_FLOOR) / np.maximum(q, _LOG_FLOOR))
    if y < 1.0:
        out = out + (1.0 - y) * np.log(
            max(1.0 - y, _LOG_FLOOR) / np.maximum(1.0 - q, _LOG_FLOOR)
        )
    return float(out) if out.ndim == 0 else out


def kl_loss_raw(y: float, raw: float) -> float:
    """Binary KL loss of a raw (pre-sigmoid) output."""
    return float(kl_loss_prob(y, sigmoid(raw)))


def default_num_draws(m: int) -> int:
    """Default draw count max(16, ceil(8 log m))."""
    return max(int(np.ceil(8.0 * np.log(m))), 16)


@dataclass(frozen=True)
class PredictorConfig:
    """Loss family and perturbation settings for the averaged predictor."""

    loss_kind: str = "square"  # "square" or "kl"
    c_p: float = 1.0
    S: int = 16
    z: float = 0.01  # KL label clip: labels forced into [z, 1-z]

    def __post_init__(self):
        if self.loss_kind not in ("square", "kl"):
            raise ConfigurationError(f"unknown loss_kind {self.loss_kind!r}")
        if self.c_p < 0:
            raise ConfigurationError("c_p must be >= 0")
        if self.S < 1:
            raise ConfigurationError("S must be >= 1")
        if self.loss_kind == "kl" and not 0.0 < self.z < 0.5:
            raise ConfigurationError("z must lie in (0, 0.5) for the KL loss")


class PerturbationSet:
    """S reproducible sign streams of length p, held as sub-seeds.

    Each stream is the +-1 sequence generated counter-based from its sub-seed,
    so regeneration is bit-deterministic and nothing is stored per draw.
    """

    def __init__(self, seeds: np.ndarray, p: int, c_p: float):
        if len(seeds) < 1 or p < 1:
            raise ConfigurationError("need S >= 1 draws and p >= 1 dimensions")
        self.seeds = np.asarray(seeds, dtype=np.uint64)
        self.S = len(seeds)
        self.p = p
        self.c_p = float(c_p)
        self._cache: np.ndarray | None = None

    def draw(self, s: int) -> np.ndarray:
        """Materialize draw s as a float64 vector of +-1 entries."""
        rng = np.random.Generator(np.random.Philox(key=int(self.seeds[s])))
        return rng.integers(0, 2, size=self.p, dtype=np.int8) * 2.0 - 1.0

    def _matrix(self) -> np.ndarray | None:
        if self._cache is None and self.S * self.p <= _MAX_CACHED_ENTRIES:
            self._cache = np.stack([self.draw(s) for s in range(self.S)])
        return self._cache

    def dot_all(self, vec: np.ndarray) -> np.ndarray:
        """<eps_s, vec> for every draw s, as an (S,) array."""
        mat = self._matrix()
        if mat is not None:
            return mat @ vec
        return np.array([self.draw(s) @ vec for s in range(self.S)])

    def weighted_sum(self, weights: np.ndarray) -> np.ndarray:
        """sum_s weights[s] * eps_s, as a (p,) array."""
        mat = self._matrix()
        if mat is not None:
            return mat.T @ weights
        out = np.zeros(self.p)
        for s in range(self.S):
            out += weights[s] * self.draw(s)
        return out


def make_perturbations(seed: int, S: int, p: int, c_p: float) -> PerturbationSet:
    """Derive S independent sub-seeds from seed and wrap them as a PerturbationSet."""
    if S < 1 or p < 1:
        raise ConfigurationError(f"need S >= 1 and p >= 1, got S={S} p={p}")
    seeds = np.random.SeedSequence(seed).generate_state(S, dtype=np.uint64)
    return PerturbationSet(seeds, p, c_p)


def perturbation_term(params: NetworkParams, snapshot: InitSnapshot,
                      eps: np.ndarray, c_p: float) -> float:
    """c_p * <theta - theta0, eps> / m^(1/4) for one materialized draw."""
    if c_p == 0.0:
        return 0.0
    delta = params.flat - snapshot.theta0.flat
    return c_p * float(delta @ eps) / params.dims.m ** 0.25


def perturbed_output(params: NetworkParams, snapshot: InitSnapshot, x: np.ndarray,
                     eps: np.ndarray, c_p: float) -> float:
    """f_tilde(theta; x, eps) for one draw."""
    out = forward(params, x) + perturbation_term(params, snapshot, eps, c_p)
    if not np.isfinite(out):
        raise NumericError("perturbed output is not finite")
    return out


def _draw_outputs(params: NetworkParams, snapshot: InitSnapshot, x: np.ndarray,
                  perts: PerturbationSet, c_p: float) -> np.ndarray:
    """All S perturbed outputs at once: f + c_p * E (theta - theta0) / m^(1/4)."""
    f = forward(params, x)
    if c_p == 0.0:
        return np.full(perts.S, f)
    delta = params.flat - snapshot.theta0.flat
    return f + c_p * perts.dot_all(delta) / params.dims.m ** 0.25


def averaged_prediction(params: NetworkParams, snapshot: InitSnapshot, x: np.ndarray,
                        perts: PerturbationSet, cfg: PredictorConfig) -> float:
    """Average the S draws: raw mean for square loss, mean of sigmoids for KL."""
    outs = _draw_outputs(params, snapshot, x, perts, cfg.c_p)
    if cfg.loss_kind == "kl":
        return float(np.mean(sigmoid(outs)))
    return float(np.mean(outs))


def clip_kl_label(y: float, z: float) -> float:
    y = min(max(y, z), 1.0 - z)
    if not 0.0 < y < 1.0:
        raise DomainError(f"KL label {y} outside (0, 1) after clipping")
    return y


def averaged_loss(params: NetworkParams, snapshot: InitSnapshot, x: np.ndarray,
                  y: float, perts: PerturbationSet, cfg: PredictorConfig) -> float:
    """Mean per-draw loss (1/S) sum_s loss(y, f_tilde_s)."""
    outs = _draw_outputs(params, snapshot, x, perts, cfg.c_p)
    if cfg.loss_kind == "kl":
        y = clip_kl_label(y, cfg.z)
        return float(np.mean(kl_loss_prob(y, sigmoid(outs))))
    return float(np.mean(0.5 * (y - outs) ** 2))


def averaged_loss_grad(params: NetworkParams, snapshot: InitSnapshot, x: np.ndarray,
                       y: float, perts: PerturbationSet,
                       cfg: PredictorConfig) -> tuple[float, NetworkParams]:
    """Averaged loss and its exact gradient.

    Per draw, d loss / d output is (f_tilde_s - y) for the square loss and
    (sigmoid(f_tilde_s) - y) for the KL loss; the chain rule through
    f_tilde_s contributes grad f plus the scaled sign vector, so

        grad = mean_s l'_s * grad f  +  (c_p / m^(1/4)) * mean_s l'_s * eps_s.
    """
    outs = _draw_outputs(params, snapshot, x, perts, cfg.c_p)
    if cfg.loss_kind == "kl":
        y = clip_kl_label(y, cfg.z)
        probs = sigmoid(outs)
        loss = float(np.mean(kl_loss_prob(y, probs)))
        lprime = probs - y
    else:
        loss = float(np.mean(0.5 * (y - outs) ** 2))
        lprime = outs - y
    if not np.isfinite(loss):
        raise NumericError("averaged loss is not finite")

    grad_f = backward(params, x)
    grad_flat = np.mean(lprime) * grad_f.flat
    if cfg.c_p > 0.0:
        grad_flat = grad_flat + (cfg.c_p / params.dims.m ** 0.25) * perts.weighted_sum(
            lprime / perts.S
        )
    return loss, NetworkParams(grad_flat, params.dims, params.activation)
