"""Command-line harness: experiment orchestration and result persistence.

Subcommands: run-bandit, run-regression, analyze-bounds, diagnose, plot.
Every output file is a deterministic function of (config, seeds): reruns
produce byte-identical CSV/JSON/SVG.  Set GAPWEIGHT_LOG=error|info|debug to
control verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import envs
from .config import ExperimentConfig, parse_config
from .diagnostics import (
    DiagnosticsReport,
    almost_convexity_check,
    analyze_gram_bounds,
    eig_sym,
    gradient_check,
    hessian_norm_estimate,
    interpolation_check,
    ntk_gram,
    pl_check,
)
from .errors import ConfigurationError
from .net import NetworkConfig, init_from_config, init_params
from .ogd import (
    BallSpec,
    OgdConfig,
    RegressionStream,
    build_learner_state,
    estimate_comparator,
    run_online_regression,
)
from .perturb import make_perturbations
from .policies import BanditLearner, PolicyConfig, bandit_round, bandit_update

log = logging.getLogger("gapweight")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, payload: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def build_bandit_stream(cfg: ExperimentConfig, seed: int) -> envs.BanditStream:
    env = cfg.environment
    T = cfg.ogd.T
    if env.kind in envs.SYNTH_KINDS:
        stream = envs.synth_stream(env.kind, cfg.network.d, env.K, T, env.noise_sd, seed)
    elif env.kind == "classification":
        if env.dataset:
            features, labels, _ = envs.load_csv(env.dataset, env.label_column)
        else:
            d_feat = env.feature_dim or cfg.network.d // env.K
            if d_feat * env.K != cfg.network.d:
                raise ConfigurationError(
                    f"network.d = {cfg.network.d} must equal feature_dim * K = {d_feat * env.K}"
                )
            features, labels = envs.separable_classes(
                T, d_feat, env.K, seed, spread=env.class_spread
            )
        stream = envs.dataset_to_bandit(features, labels, env.K)
    else:
        raise ConfigurationError(f"unknown environment kind {env.kind!r}")
    stream = envs.apply_ordering(stream, env.ordering, seed)
    if stream.T > T:
        stream = envs.BanditStream(
            contexts=stream.contexts[:T],
            losses=stream.losses[:T],
            labels=stream.labels[:T],
            kind=stream.kind,
            seed=stream.seed,
            ordering=stream.ordering,
        )
    if stream.d != cfg.network.d:
        raise ConfigurationError(
            f"stream context dim {stream.d} does not match network.d = {cfg.network.d}"
        )
    return stream


def measured_lambda0(net_cfg: NetworkConfig, contexts: np.ndarray, seed: int,
                     cap: int) -> float:
    """Smallest NTK eigenvalue at theta0 over the first min(n, cap) contexts."""
    snapshot = init_from_config(net_cfg, seed)
    sample = contexts.reshape(-1, contexts.shape[-1])[:cap]
    gram = ntk_gram(snapshot.theta0, sample)
    lam_min = float(eig_sym(gram.matrix).values[-1])
    return max(lam_min, 1e-12)


def resolve_ogd_config(cfg: ExperimentConfig, lambda0_hat: float) -> OgdConfig:
    """Radii default rho = rho_scale sqrt(T)/lambda0_hat, rho1 as configured."""
    o = cfg.ogd
    ball = BallSpec(rho=o.rho_scale * np.sqrt(o.T) / lambda0_hat, rho1=o.rho1)
    return OgdConfig(mu=o.mu, T=o.T, ball=ball, predictor=cfg.predictor_config())


def _learner_init_seed(seed: int) -> int:
    """The init-stream sub-seed used by build_learner_state for this run seed."""
    return int(np.random.SeedSequence(seed).generate_state(2, dtype=np.uint64)[0])


@dataclass
class RunResult:
    """Aggregate over seeds; wall_clock is logged, never persisted."""

    per_seed: dict
    aggregate: dict
    config_echo: dict
    wall_clock: float

    def payload(self) -> dict:
        return {
            "per_seed": self.per_seed,
            "aggregate": self.aggregate,
            "config": self.config_echo,
        }


def _aggregate(finals: dict) -> dict:
    values = np.array([finals[k] for k in sorted(finals)])
    return {
        "mean_final": float(np.mean(values)),
        "std_final": float(np.std(values)),  # population std over the seed set
        "n_seeds": len(values),
    }


# ---------------------------------------------------------------------------
# run-bandit
# ---------------------------------------------------------------------------

def _bandit_one_seed(cfg: ExperimentConfig, seed: int, out_dir: Path) -> dict:
    stream = build_bandit_stream(cfg, seed)
    net_cfg = cfg.network_config()
    lam0 = measured_lambda0(
        net_cfg, stream.contexts, _learner_init_seed(seed), cfg.bounds.context_cap
    )
    ogd_cfg = resolve_ogd_config(cfg, lam0)
    policy = PolicyConfig(
        kind=cfg.policy.kind,
        gamma0=cfg.policy.gamma0,
        gamma_schedule=cfg.policy.gamma_schedule,
        regression=None if cfg.policy.kind == "uniform" else ogd_cfg,
    )
    learner = BanditLearner(net_cfg, policy, seed)
    seed_dir = out_dir / f"seed{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    cum_loss = 0.0
    cum_best = 0.0
    with open(seed_dir / "rounds.csv", "w", encoding="utf-8") as fh:
        fh.write("t,chosen,loss,cum_loss,cum_regret\n")
        for t in range(1, stream.T + 1):
            contexts = stream.contexts[t - 1]
            arm, _ = bandit_round(learner, contexts)
            loss = float(stream.losses[t - 1, arm])
            bandit_update(learner, contexts[arm], loss)
            cum_loss += loss
            cum_best += float(np.min(stream.losses[t - 1]))
            fh.write(f"{t},{arm},{loss!r},{cum_loss!r},{cum_loss - cum_best!r}\n")
    summary = {
        "seed": seed,
        "T": stream.T,
        "K": stream.K,
        "policy": cfg.policy.kind,
        "lambda0_hat": lam0,
        "rho": ogd_cfg.ball.rho,
        "final_cum_loss": cum_loss,
        "final_cum_regret": cum_loss - cum_best,
    }
    write_json(seed_dir / "summary.json", summary)
    stream.write_manifest(seed_dir / "manifest.json")
    return summary


def run_bandit(cfg: ExperimentConfig, out_dir) -> RunResult:
    t0 = time.perf_counter()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = list(cfg.run.seeds)
    if cfg.run.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.run.threads) as pool:
            summaries = list(pool.map(lambda s: _bandit_one_seed(cfg, s, out_dir), seeds))
    else:
        summaries = [_bandit_one_seed(cfg, s, out_dir) for s in seeds]
    per_seed = {str(s["seed"]): s for s in summaries}
    finals = {k: v["final_cum_regret"] for k, v in per_seed.items()}
    result = RunResult(
        per_seed=per_seed,
        aggregate=_aggregate(finals),
        config_echo=cfg.effective(),
        wall_clock=time.perf_counter() - t0,
    )
    write_json(out_dir / "result.json", result.payload())
    log.info("run-bandit finished in %.2fs", result.wall_clock)
    return result


# ---------------------------------------------------------------------------
# run-regression
# ---------------------------------------------------------------------------

def build_regression_stream(cfg: ExperimentConfig, seed: int) -> RegressionStream:
    """Realizable stream from a teacher planted in the learner's own
    perturbed predictor class (sharing the run's snapshot and draws)."""
    net_cfg = cfg.network_config()
    # ball radii are irrelevant for deriving snapshot and draws
    probe = OgdConfig(mu=cfg.ogd.mu, T=cfg.ogd.T, ball=BallSpec(1.0, 1.0),
                      predictor=cfg.predictor_config())
    snapshot, _, perts = build_learner_state(net_cfg, probe, seed)
    stream_seed = int(np.random.SeedSequence(seed).generate_state(4, dtype=np.uint64)[3])
    return envs.perturbed_teacher_stream(
        snapshot, perts, probe.predictor, cfg.ogd.T, stream_seed,
        bias=cfg.environment.teacher_bias,
        spread=cfg.environment.teacher_spread,
    )


def _regression_one_seed(cfg: ExperimentConfig, seed: int, out_dir: Path) -> dict:
    net_cfg = cfg.network_config()
    stream = build_regression_stream(cfg, seed)
    lam0 = measured_lambda0(
        net_cfg, stream.X, _learner_init_seed(seed), cfg.bounds.context_cap
    )
    ogd_cfg = resolve_ogd_config(cfg, lam0)
    run = run_online_regression(stream, net_cfg, ogd_cfg, seed)
    run.trace.comparator_loss = estimate_comparator(
        stream, net_cfg, ogd_cfg, cfg.ogd.comparator_epochs, seed
    )
    seed_dir = out_dir / f"seed{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    run.trace.to_csv(seed_dir / "trace.csv")
    summary = dict(run.trace.summary())
    summary.update({"seed": seed, "lambda0_hat": lam0, "rho": ogd_cfg.ball.rho})
    write_json(seed_dir / "summary.json", summary)
    return summary


def run_regression(cfg: ExperimentConfig, out_dir) -> RunResult:
    t0 = time.perf_counter()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = list(cfg.run.seeds)
    if cfg.run.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.run.threads) as pool:
            summaries = list(pool.map(lambda s: _regression_one_seed(cfg, s, out_dir), seeds))
    else:
        summaries = [_regression_one_seed(cfg, s, out_dir) for s in seeds]
    per_seed = {str(s["seed"]): s for s in summaries}
    finals = {k: v["regret"] for k, v in per_seed.items()}
    result = RunResult(
        per_seed=per_seed,
        aggregate=_aggregate(finals),
        config_echo=cfg.effective(),
        wall_clock=time.perf_counter() - t0,
    )
    write_json(out_dir / "result.json", result.payload())
    log.info("run-regression finished in %.2fs", result.wall_clock)
    return result


# ---------------------------------------------------------------------------
# analyze-bounds
# ---------------------------------------------------------------------------

def analyze_bounds(cfg: ExperimentConfig, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = cfg.run.seeds[0]
    stream = build_bandit_stream(cfg, seed)
    contexts = stream.contexts.reshape(-1, stream.d)
    T, K = stream.T, stream.K
    snapshot = init_from_config(cfg.network_config(), _learner_init_seed(seed))
    gram = ntk_gram(snapshot.theta0, contexts[: T * K])
    report = analyze_gram_bounds(gram, T=T, K=K, lambda_reg=cfg.bounds.lambda_reg)
    path = out_dir / "bounds.json"
    report.to_json(path)
    log.info(
        "bounds: xi=%.6f B_nucb=%.3f (cert=%s) B_nts=%.3f (cert=%s)",
        report.xi, report.b_nucb, report.cert_nucb, report.b_nts, report.cert_nts,
    )
    return path


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------

def diagnose(cfg: ExperimentConfig, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    d = cfg.diagnose
    net_cfg = cfg.network_config()
    seed = cfg.run.seeds[0]
    rng = np.random.Generator(np.random.Philox(key=np.random.SeedSequence(seed).generate_state(1, dtype=np.uint64)[0]))

    grad_err = gradient_check(
        init_params(net_cfg.d, min(net_cfg.m, 32), min(net_cfg.L, 2), net_cfg.sigma1, seed),
        n_samples=d.gradient_samples, seed=seed + 1,
    )

    hessian_by_width = {}
    grad_norm_bound = 0.0
    from .net import backward

    for m in d.widths:
        estimates = []
        for k in range(d.hessian_samples):
            snap = init_params(net_cfg.d, int(m), net_cfg.L, net_cfg.sigma1, seed + 7 * k)
            x = rng.standard_normal(net_cfg.d)
            x /= np.linalg.norm(x)
            estimates.append(
                hessian_norm_estimate(snap.theta0, x, probes=d.hessian_probes, seed=k)
            )
            grad_norm_bound = max(grad_norm_bound, float(np.linalg.norm(backward(snap.theta0, x).flat)))
        hessian_by_width[int(m)] = float(np.median(estimates))
    c_h_hat = float(
        np.mean([est * np.sqrt(m) for m, est in hessian_by_width.items()])
    )

    # PL witness on a short realizable run; the modest ball keeps the
    # trajectory bounded even when mu is small for this width.
    pl_T = min(cfg.ogd.T, 100)
    pred_cfg = cfg.predictor_config()
    pl_ball = BallSpec(rho=1.0, rho1=1.0)
    pl_ogd = OgdConfig(mu=cfg.ogd.mu, T=pl_T, ball=BallSpec(rho=2.0, rho1=2.0),
                       predictor=pred_cfg)
    snapshot, _, _ = build_learner_state(net_cfg, pl_ogd, seed)
    pl_stream = envs.teacher_stream(snapshot, pl_ball, pl_T, seed + 13,
                                    link_scale=cfg.environment.teacher_link_scale)
    run = run_online_regression(pl_stream, net_cfg, pl_ogd, seed, record_every=5)
    pl_result = pl_check(run.recorded, run.snapshot, run.perts, pred_cfg)

    # loss-derivative witness along the same trajectory
    from .perturb import averaged_prediction

    lipschitz_hat = 0.0
    for params, x, y in run.recorded:
        pred = averaged_prediction(params, run.snapshot, x, run.perts, pred_cfg)
        lipschitz_hat = max(lipschitz_hat, abs(pred - y))

    convexity_ball = BallSpec(rho=1.0, rho1=1.0)
    perts = make_perturbations(seed + 17, pred_cfg.S, snapshot.theta0.dims.p, pred_cfg.c_p)
    convexity = almost_convexity_check(
        snapshot, convexity_ball, perts, pred_cfg, n_pairs=d.convexity_pairs, seed=seed + 19
    )

    interp_X = rng.standard_normal((d.interpolation_points, net_cfg.d))
    interp_X /= np.linalg.norm(interp_X, axis=1, keepdims=True)
    interp_y = rng.uniform(0.0, 1.0, size=d.interpolation_points)
    interp_cfg = OgdConfig(mu=cfg.ogd.mu, T=max(d.interpolation_points, 1),
                           ball=BallSpec(rho=1e6, rho1=1e6), predictor=pred_cfg)
    residual = interpolation_check(
        RegressionStream(interp_X, interp_y), net_cfg, interp_cfg,
        epochs=d.interpolation_epochs, seed=seed + 23,
    )

    report = DiagnosticsReport(
        grad_check_max_rel_err=grad_err,
        hessian_norm_by_width=hessian_by_width,
        c_h_hat=c_h_hat,
        grad_norm_bound=grad_norm_bound,
        loss_lipschitz_hat=lipschitz_hat,
        pl_pass_fraction=pl_result.pass_fraction,
        pl_mu_hat=pl_result.mu_hat if np.isfinite(pl_result.mu_hat) else 0.0,
        almost_convexity_eps_hat=convexity.eps_hat,
        almost_convexity_pass_fraction=convexity.pass_fraction,
        interpolation_residual=residual,
    )
    path = out_dir / "diagnostics.json"
    report.to_json(path)
    log.info("diagnostics written to %s", path)
    return path


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _add_config_args(sub, needs_config=True):
    if needs_config:
        sub.add_argument("--config", required=True, help="path to the TOML config")
    sub.add_argument("--out", default=None, help="output directory (overrides run.output_dir)")
    sub.add_argument("--seeds", default=None, help="comma-separated seed list override")
    sub.add_argument("--threads", type=int, default=None, help="worker threads over seeds")


def _load(args) -> ExperimentConfig:
    cfg = parse_config(args.config)
    if args.seeds is not None:
        try:
            cfg.run.seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError:
            raise ConfigurationError(f"bad --seeds value {args.seeds!r}") from None
        if not cfg.run.seeds:
            raise ConfigurationError("--seeds must list at least one seed")
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigurationError("--threads must be >= 1")
        cfg.run.threads = args.threads
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    return Path(args.out) if args.out else Path(cfg.run.output_dir)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gapweight",
        description="Neural contextual bandits with inverse gap weighting: "
        "runs, bound analysis, diagnostics, plots.",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    for name in ("run-bandit", "run-regression", "analyze-bounds", "diagnose"):
        _add_config_args(subs.add_parser(name))
    plot = subs.add_parser("plot", help="render SVG figures from result directories")
    plot.add_argument("result_dirs", nargs="+", help="one or more run output directories")
    plot.add_argument("--out", default=None, help="figure directory (default: first result dir)")
    return parser


def main(argv=None) -> int:
    level = os.environ.get("GAPWEIGHT_LOG", "error").lower()
    logging.basicConfig(
        level={"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
            level, logging.ERROR
        ),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "plot":
            from .plots import plot_result_dirs

            out = Path(args.out) if args.out else Path(args.result_dirs[0])
            written = plot_result_dirs(args.result_dirs, out)
            print("\n".join(str(p) for p in written))
            return 0
        cfg = _load(args)
        out_dir = _out_dir(args, cfg)
        if args.command == "run-bandit":
            run_bandit(cfg, out_dir)
        elif args.command == "run-regression":
            run_regression(cfg, out_dir)
        elif args.command == "analyze-bounds":
            analyze_bounds(cfg, out_dir)
        elif args.command == "diagnose":
            diagnose(cfg, out_dir)
        return 0
    except Exception as exc:  # one-line machine-parsable failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
