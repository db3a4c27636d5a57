"""Bandit policies: inverse gap weighting over per-arm predicted losses.

Two rules map K predicted losses (lower is better) to an action distribution:

  plain IGW        p_a = 1 / (K + gamma * (score_a - score_b)),  a != b
  re-weighted IGW  p_a = score_b / (K score_b + gamma * (score_a - score_b))

with b the score-minimizing arm (ties to the lowest index) taking the leftover
mass.  The square-loss learner uses the plain rule; the KL learner uses the
re-weighted rule on sigmoid predictions clipped away from 0 and 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError
from .net import NetworkConfig
from .ogd import OgdConfig, build_learner_state, ogd_step
from .perturb import averaged_loss_grad, averaged_prediction

POLICY_KINDS = ("neu_squarecb", "neu_fastcb", "uniform")


@dataclass
class ArmDistribution:
    """Probability vector over K arms; validated on construction."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if np.any(self.probs < 0):
            raise DomainError("negative arm probability")
        if abs(float(np.sum(self.probs)) - 1.0) > 1e-12:
            raise DomainError(f"arm probabilities sum to {np.sum(self.probs)}")

    @property
    def K(self) -> int:
        return len(self.probs)

    def sample(self, u: float) -> int:
        """Inverse-CDF sample from one uniform draw in [0, 1)."""
        cdf = np.cumsum(self.probs)
        return int(np.searchsorted(cdf, u, side="right").clip(0, self.K - 1))


@dataclass(frozen=True)
class PolicyConfig:
    kind: str
    gamma0: float
    gamma_schedule: str = "sqrt_kt"  # or "fixed"
    regression: OgdConfig | None = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ConfigurationError(f"unknown policy kind {self.kind!r}")
        if self.gamma0 <= 0:
            raise ConfigurationError("gamma0 must be positive")
        if self.gamma_schedule not in ("sqrt_kt", "fixed"):
            raise ConfigurationError(f"unknown gamma schedule {self.gamma_schedule!r}")


@dataclass
class Round:
    """One bandit interaction as logged by the harness."""

    t: int
    chosen: int
    observed_loss: float


def igw_distribution(scores: np.ndarray, gamma: float) -> ArmDistribution:
    """Plain inverse gap weighting on predicted losses (lower is better)."""
    scores = np.asarray(scores, dtype=np.float64)
    if gamma <= 0:
        raise ConfigurationError("gamma must be positive")
    if len(scores) < 1 or not np.all(np.isfinite(scores)):
        raise DomainError("scores must be a nonempty finite vector")
    K = len(scores)
    b = int(np.argmin(scores))
    probs = 1.0 / (K + gamma * (scores - scores[b]))
    probs[b] = 0.0
    probs[b] = 1.0 - float(np.sum(probs))
    return ArmDistribution(probs)


def reweighted_igw_distribution(scores: np.ndarray, gamma: float) -> ArmDistribution:
    """Re-weighted inverse gap weighting; scores must be strictly positive."""
    scores = np.asarray(scores, dtype=np.float64)
    if gamma <= 0:
        raise ConfigurationError("gamma must be positive")
    if np.any(scores <= 0):
        raise DomainError("re-weighted IGW needs strictly positive scores (clip first)")
    K = len(scores)
    b = int(np.argmin(scores))
    probs = scores[b] / (K * scores[b] + gamma * (scores - scores[b]))
    probs[b] = 0.0
    probs[b] = 1.0 - float(np.sum(probs))
    return ArmDistribution(probs)


def gamma_at(t: int, cfg: PolicyConfig, K: int) -> float:
    """Exploration scale at round t."""
    if cfg.gamma_schedule == "fixed":
        return cfg.gamma0
    return cfg.gamma0 * np.sqrt(K * t)


class BanditLearner:
    """Online-regression-backed bandit policy with replay-stable sampling.

    One RNG draw is consumed per round (for the arm sample), so a run is
    reproducible from (configs, seed) alone.  The uniform policy keeps the
    same sampling path but skips regression updates.
    """

    def __init__(self, net_cfg: NetworkConfig, policy: PolicyConfig, seed: int):
        if policy.kind != "uniform" and policy.regression is None:
            raise ConfigurationError(f"{policy.kind} needs a regression config")
        self.policy = policy
        self.t = 1
        regression = policy.regression
        if regression is not None:
            self.cfg = regression
            self.snapshot, self.params, self.perts = build_learner_state(
                net_cfg, regression, seed
            )
        else:
            self.cfg = None
        sample_seed = np.random.SeedSequence(seed).generate_state(3, dtype=np.uint64)[2]
        self.rng = np.random.Generator(np.random.Philox(key=int(sample_seed)))

    def arm_scores(self, arm_contexts: np.ndarray) -> np.ndarray:
        pred_cfg = self.cfg.predictor
        scores = np.array(
            [
                averaged_prediction(self.params, self.snapshot, x, self.perts, pred_cfg)
                for x in arm_contexts
            ]
        )
        if self.policy.kind == "neu_fastcb":
            scores = np.clip(scores, pred_cfg.z, 1.0 - pred_cfg.z)
        return scores

    def distribution(self, arm_contexts: np.ndarray) -> ArmDistribution:
        K = len(arm_contexts)
        if self.policy.kind == "uniform":
            return ArmDistribution(np.full(K, 1.0 / K))
        if K == 1:
            return ArmDistribution(np.ones(1))
        scores = self.arm_scores(arm_contexts)
        gamma = gamma_at(self.t, self.policy, K)
        if self.policy.kind == "neu_fastcb":
            return reweighted_igw_distribution(scores, gamma)
        return igw_distribution(scores, gamma)


def bandit_round(learner: BanditLearner, arm_contexts: np.ndarray) -> tuple[int, ArmDistribution]:
    """Score the arms, build the action distribution, and sample one arm."""
    dist = learner.distribution(np.asarray(arm_contexts, dtype=np.float64))
    chosen = dist.sample(float(learner.rng.random()))
    return chosen, dist


def bandit_update(learner: BanditLearner, x: np.ndarray, y: float) -> None:
    """Feed the chosen arm's observed loss to the regression learner."""
    if not 0.0 <= y <= 1.0:
        raise DomainError(f"observed loss {y} outside [0, 1]")
    if learner.policy.kind != "uniform":
        pred_cfg = learner.cfg.predictor
        if pred_cfg.loss_kind == "kl":
            y = min(max(y, pred_cfg.z), 1.0 - pred_cfg.z)
        _, grad = averaged_loss_grad(
            learner.params, learner.snapshot, np.asarray(x, dtype=np.float64), y,
            learner.perts, pred_cfg,
        )
        learner.params = ogd_step(learner.params, grad, learner.t, learner.cfg, learner.snapshot)
    learner.t += 1
