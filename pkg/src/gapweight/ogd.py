"""Projected online gradient descent over the layer-wise Frobenius ball.

Each hidden layer's drift from initialization is capped at rho in Frobenius
norm and the output vector's at rho1; the projection rescales any offending
block radially back onto its sphere.  The step size decays as 4 / (mu t).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericError
from .net import InitSnapshot, NetworkConfig, NetworkParams, init_from_config
from .perturb import (
    PerturbationSet,
    PredictorConfig,
    averaged_loss_grad,
    averaged_prediction,
    kl_loss_prob,
    make_perturbations,
    square_loss,
)


@dataclass(frozen=True)
class BallSpec:
    """Per-hidden-layer radius rho and output-vector radius rho1."""

    rho: float
    rho1: float

    def __post_init__(self):
        if not (np.isfinite(self.rho) and np.isfinite(self.rho1)):
            raise ConfigurationError("ball radii must be finite")
        if self.rho <= 0 or self.rho1 <= 0:
            raise ConfigurationError("ball radii must be positive")


@dataclass(frozen=True)
class OgdConfig:
    mu: float
    T: int
    ball: BallSpec
    predictor: PredictorConfig

    def __post_init__(self):
        if self.mu <= 0:
            raise ConfigurationError("mu must be positive")
        if self.T < 1:
            raise ConfigurationError("horizon T must be >= 1")


@dataclass
class RegretTrace:
    """Per-round losses plus the offline comparator baseline."""

    losses: list[float] = field(default_factory=list)
    comparator_loss: float | None = None

    def record(self, loss: float):
        self.losses.append(loss)

    @property
    def cumulative(self) -> float:
        return float(np.sum(self.losses))

    @property
    def regret(self) -> float | None:
        if self.comparator_loss is None:
            return None
        return self.cumulative - self.comparator_loss

    def rows(self):
        """(t, loss, cum_loss) triples, 1-based rounds."""
        cum = 0.0
        for t, loss in enumerate(self.losses, start=1):
            cum += loss
            yield t, loss, cum

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t,loss,cum_loss\n")
            for t, loss, cum in self.rows():
                fh.write(f"{t},{loss!r},{cum!r}\n")

    def summary(self) -> dict:
        return {
            "T": len(self.losses),
            "cum_loss": self.cumulative,
            "comparator_loss": self.comparator_loss,
            "regret": self.regret,
        }

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def step_size(t: int, mu: float) -> float:
    """Round-t step size 4 / (mu t)."""
    if t < 1:
        raise ConfigurationError(f"round index must be >= 1, got {t}")
    if mu <= 0:
        raise ConfigurationError(f"mu must be positive, got {mu}")
    return 4.0 / (mu * t)


def project_ball(params: NetworkParams, snapshot: InitSnapshot,
                 ball: BallSpec) -> NetworkParams:
    """Project onto the layer-wise Frobenius ball around theta0.

    Blocks already inside their radius are returned untouched (bitwise), so
    the projection is idempotent on the feasible set.
    """
    dims = params.dims
    slices = dims.layer_slices()
    radii = [ball.rho] * dims.L + [ball.rho1]
    out = None  # copy lazily: most steps stay inside the ball
    for sl, radius in zip(slices, radii):
        diff = params.flat[sl] - snapshot.theta0.flat[sl]
        nrm = float(np.linalg.norm(diff))
        if nrm > radius:
            if out is None:
                out = params.copy()
            out.flat[sl] = snapshot.theta0.flat[sl] + diff * (radius / nrm)
    return params if out is None else out


def ogd_step(params: NetworkParams, grad: NetworkParams, t: int, cfg: OgdConfig,
             snapshot: InitSnapshot) -> NetworkParams:
    """One projected OGD update theta <- Pi_B(theta - eta_t grad)."""
    if not np.all(np.isfinite(grad.flat)):
        raise NumericError(f"non-finite gradient at round {t}; aborting run")
    stepped = params.add_scaled(-step_size(t, cfg.mu), grad)
    return project_ball(stepped, snapshot, cfg.ball)


@dataclass
class RegressionStream:
    """Labelled contexts for online regression: X is (T, d), y is (T,)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise ConfigurationError("stream needs matching X (T, d) and y (T,)")

    def __len__(self):
        return len(self.y)


def _loss_of_prediction(kind: str, y: float, pred: float) -> float:
    """Loss of the averaged prediction itself (the regret-facing quantity)."""
    if kind == "kl":
        return float(kl_loss_prob(y, pred))
    return square_loss(y, pred)


@dataclass
class RegressionRun:
    """Outcome of one online regression run, with optional parameter snapshots."""

    trace: RegretTrace
    final_params: NetworkParams
    snapshot: InitSnapshot
    perts: PerturbationSet
    recorded: list[tuple[NetworkParams, np.ndarray, float]]


def build_learner_state(net_cfg: NetworkConfig, cfg: OgdConfig, seed: int):
    """Derive (snapshot, params, perts) deterministically from one run seed."""
    init_seed, pert_seed = np.random.SeedSequence(seed).generate_state(2, dtype=np.uint64)
    snapshot = init_from_config(net_cfg, int(init_seed))
    params = snapshot.theta0.copy()
    pred = cfg.predictor
    perts = make_perturbations(int(pert_seed), pred.S, snapshot.theta0.dims.p, pred.c_p)
    return snapshot, params, perts


def run_online_regression(stream: RegressionStream, net_cfg: NetworkConfig,
                          cfg: OgdConfig, seed: int,
                          record_every: int = 0) -> RegressionRun:
    """Predict, record the loss, take one projected OGD step; repeat.

    The recorded loss at round t is the loss of the averaged prediction
    against y_t.  With record_every = k > 0, a copy of the parameters is kept
    every k rounds (plus the first round) for later trajectory diagnostics.
    """
    snapshot, params, perts = build_learner_state(net_cfg, cfg, seed)
    pred_cfg = cfg.predictor
    trace = RegretTrace()
    recorded = []
    for t in range(1, len(stream) + 1):
        x, y = stream.X[t - 1], float(stream.y[t - 1])
        if pred_cfg.loss_kind == "kl":
            y = min(max(y, pred_cfg.z), 1.0 - pred_cfg.z)
        prediction = averaged_prediction(params, snapshot, x, perts, pred_cfg)
        trace.record(_loss_of_prediction(pred_cfg.loss_kind, y, prediction))
        if record_every > 0 and (t == 1 or t % record_every == 0):
            recorded.append((params.copy(), x.copy(), y))
        _, grad = averaged_loss_grad(params, snapshot, x, y, perts, pred_cfg)
        params = ogd_step(params, grad, t, cfg, snapshot)
    return RegressionRun(trace, params, snapshot, perts, recorded)


def total_stream_loss(params: NetworkParams, snapshot: InitSnapshot,
                      stream: RegressionStream, perts: PerturbationSet,
                      pred_cfg: PredictorConfig) -> float:
    from .perturb import averaged_loss

    return float(
        sum(
            averaged_loss(params, snapshot, stream.X[i], float(stream.y[i]), perts, pred_cfg)
            for i in range(len(stream))
        )
    )


def estimate_comparator(stream: RegressionStream, net_cfg: NetworkConfig,
                        cfg: OgdConfig, epochs: int, seed: int,
                        initial_rate: float = 0.5) -> float:
    """Best total loss reached by multi-epoch projected gradient descent from theta0.

    Uses the same seed-derived initialization and sign draws as
    run_online_regression, so the returned value estimates the in-ball
    comparator for that run.  The step size grows gently while the loss keeps
    falling and halves on any increase (reverting the step), which makes the
    procedure deterministic and monotone in its best-so-far value.
    """
    snapshot, params, perts = build_learner_state(net_cfg, cfg, seed)
    pred_cfg = cfg.predictor
    if len(stream) == 0:
        return 0.0
    best = total_stream_loss(params, snapshot, stream, perts, pred_cfg)
    rate = initial_rate
    current = best
    for _ in range(epochs):
        grad_total = np.zeros(params.dims.p)
        for i in range(len(stream)):
            _, g = averaged_loss_grad(
                params, snapshot, stream.X[i], float(stream.y[i]), perts, pred_cfg
            )
            grad_total += g.flat
        candidate = project_ball(
            params.add_scaled(-rate, NetworkParams(grad_total, params.dims, params.activation)),
            snapshot,
            cfg.ball,
        )
        cand_loss = total_stream_loss(candidate, snapshot, stream, perts, pred_cfg)
        if cand_loss <= current:
            params, current = candidate, cand_loss
            rate *= 1.1
            best = min(best, current)
        else:
            rate *= 0.5
            if rate < 1e-14:
                break
    return best
