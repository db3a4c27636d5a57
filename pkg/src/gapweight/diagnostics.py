"""Bound analysis and numerical verification of the structural conditions.

Covers the regret-bound closed forms for the two matrix-inversion baselines
(their effective-dimension formulas and the adversarial reward construction
that drives them to linear regret), plus empirical witnesses for the
landscape facts the optimizer relies on: positive-definite NTK, PL/QG ratio,
Hessian-norm decay with width, almost convexity, and interpolation.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError, SingularMatrixError
from .net import InitSnapshot, NetworkConfig, NetworkParams, backward, forward
from .ogd import BallSpec, OgdConfig, RegressionStream, estimate_comparator
from .perturb import PerturbationSet, PredictorConfig, averaged_loss_grad


# ---------------------------------------------------------------------------
# NTK Gram matrix and eigenstructure
# ---------------------------------------------------------------------------

@dataclass
class NtkGram:
    """Gram matrix of network-output gradients over a context set."""

    matrix: np.ndarray
    contexts: np.ndarray
    params_tag: str


@dataclass
class EigenDecomp:
    """Full symmetric eigendecomposition, eigenvalues descending."""

    values: np.ndarray
    vectors: np.ndarray  # orthonormal columns, vectors[:, i] pairs with values[i]


def ntk_gram(params: NetworkParams, contexts: np.ndarray, params_tag: str = "theta0") -> NtkGram:
    """Entry (i, j) is <grad f(theta; x_i), grad f(theta; x_j)>."""
    contexts = np.asarray(contexts, dtype=np.float64)
    grads = np.stack([backward(params, x).flat for x in contexts])
    H = grads @ grads.T
    H = 0.5 * (H + H.T)  # symmetrize away dot-product rounding
    return NtkGram(matrix=H, contexts=contexts, params_tag=params_tag)


def eig_sym(matrix: np.ndarray, tol: float = 1e-12, max_sweeps: int = 60) -> EigenDecomp:
    """Cyclic Jacobi eigendecomposition for dense symmetric matrices.

    Sweeps rotate away off-diagonal mass until its Frobenius norm falls below
    tol relative to the matrix norm; rotations below a per-sweep threshold
    are skipped, which keeps late sweeps cheap.  Intended for n up to ~2000.
    """
    A = np.asarray(matrix, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigurationError("eig_sym needs a square matrix")
    if not np.allclose(A, A.T, atol=1e-10 * max(1.0, float(np.abs(A).max()))):
        raise ConfigurationError("eig_sym needs a symmetric matrix")
    n = A.shape[0]
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    norm_A = float(np.linalg.norm(A)) or 1.0
    for _ in range(max_sweeps):
        off = np.sqrt(max(float(np.sum(A * A) - np.sum(np.diag(A) ** 2)), 0.0))
        if off <= tol * norm_A:
            break
        skip_below = off / max(n, 2) * 1e-2
        for i in range(n - 1):
            for j in range(i + 1, n):
                aij = A[i, j]
                if abs(aij) <= skip_below:
                    continue
                tau = (A[j, j] - A[i, i]) / (2.0 * aij)
                t = np.sign(tau) / (abs(tau) + np.hypot(1.0, tau)) if tau != 0 else 1.0
                c = 1.0 / np.hypot(1.0, t)
                s = t * c
                rot_i, rot_j = A[i].copy(), A[j].copy()
                A[i] = c * rot_i - s * rot_j
                A[j] = s * rot_i + c * rot_j
                col_i, col_j = A[:, i].copy(), A[:, j].copy()
                A[:, i] = c * col_i - s * col_j
                A[:, j] = s * col_i + c * col_j
                A[i, j] = A[j, i] = 0.0
                vec_i, vec_j = V[:, i].copy(), V[:, j].copy()
                V[:, i] = c * vec_i - s * vec_j
                V[:, j] = s * vec_i + c * vec_j
    values = np.diag(A).copy()
    order = np.argsort(values)[::-1]
    return EigenDecomp(values=values[order], vectors=V[:, order])


def condition_number(decomp: EigenDecomp) -> float:
    """Ratio of the largest to the smallest eigenvalue."""
    lo = float(decomp.values[-1])
    if lo <= 0:
        raise SingularMatrixError("condition number undefined for non-positive spectrum")
    return float(decomp.values[0]) / lo


# ---------------------------------------------------------------------------
# Effective dimension and the regret-bound closed forms
# ---------------------------------------------------------------------------

def effective_dimension(eigs: np.ndarray, lambda_reg: float, denom_arg: float) -> float:
    """log det(I + H/lambda) / log(1 + denom_arg/lambda).

    denom_arg is T or T*K depending on the convention in play; callers that
    report should compute both.  Eigenvalues are clamped at zero so rounding
    noise in a PSD spectrum cannot flip signs.
    """
    if lambda_reg <= 0:
        raise ConfigurationError("lambda_reg must be positive")
    eigs = np.maximum(np.asarray(eigs, dtype=np.float64), 0.0)
    return float(np.sum(np.log1p(eigs / lambda_reg)) / np.log1p(denom_arg / lambda_reg))


def s_lower(h: np.ndarray, decomp: EigenDecomp) -> tuple[float, float]:
    """sqrt(h^T H^{-1} h) through the eigenbasis, and xi = min_i u_i^T h."""
    h = np.asarray(h, dtype=np.float64)
    if np.any(decomp.values <= 0):
        raise SingularMatrixError(
            f"spectrum has a non-positive eigenvalue ({decomp.values.min()}); "
            "the positive-definiteness assumption is violated"
        )
    coefs = decomp.vectors.T @ h
    s_lb = float(np.sqrt(np.sum(coefs**2 / decomp.values)))
    return s_lb, float(np.min(coefs))


def adversarial_h(decomp: EigenDecomp) -> np.ndarray:
    """Reward vector with u_i^T h = 1/sqrt(2) for every eigenvector u_i.

    Equal-angle construction: h = (1/sqrt(2)) * sum_i u_i, so each coefficient
    in the eigenbasis is exactly 1/sqrt(2) and |h| = sqrt(n/2).
    """
    n = decomp.vectors.shape[0]
    return decomp.vectors @ np.full(n, 1.0 / np.sqrt(2.0))


def nucb_bound(T: int, K: int, lambda_reg: float, d_tilde: float, s_lb: float) -> float:
    """sqrt(T) (d log(1 + TK/l) + S sqrt(d log(1 + TK/l) l)) for the UCB baseline."""
    log_term = np.log1p(T * K / lambda_reg)
    return float(
        np.sqrt(T) * (d_tilde * log_term + s_lb * np.sqrt(d_tilde * log_term * lambda_reg))
    )


def nts_bound(T: int, K: int, d_tilde: float, s_lb: float) -> float:
    """Thompson-sampling baseline bound at its prescribed lambda = 1 + 1/T."""
    lam = 1.0 + 1.0 / T
    log_term = np.log1p(T * K / lam)
    return float(
        np.sqrt(T)
        * (1.0 + np.sqrt(np.log(T) + np.log(K)))
        * (s_lb + np.sqrt(d_tilde * log_term))
        * np.sqrt(lam * d_tilde * np.log1p(T * K))
    )


@dataclass
class BoundReport:
    """Everything the bound analyzer measures on one context set."""

    T: int
    K: int
    lambda_reg: float
    lambda0: float
    kappa: float
    d_tilde: float        # TK-denominator convention, used inside the bounds
    d_tilde_t: float      # T-denominator convention, reported alongside
    xi: float
    s_lb: float
    h_norm: float
    b_nucb: float
    b_nts: float
    cert_nucb: bool
    cert_nts: bool

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


def analyze_gram_bounds(gram: NtkGram, T: int, K: int, lambda_reg: float = 1.0,
                        h: np.ndarray | None = None) -> BoundReport:
    """Run the full lower-bound construction on one NTK Gram matrix.

    With no h supplied, uses the equal-angle adversarial vector, for which
    xi = 1/sqrt(2) and the UCB-baseline bound must exceed xi sqrt(K) T.
    """
    n = gram.matrix.shape[0]
    if n != T * K:
        raise ConfigurationError(f"need T*K = {T * K} contexts, got {n}")
    decomp = eig_sym(gram.matrix)
    if np.any(decomp.values <= 0):
        raise SingularMatrixError(
            "NTK Gram is not positive definite on this context set"
        )
    if h is None:
        h = adversarial_h(decomp)
    s_lb, xi = s_lower(h, decomp)
    lambda0 = float(decomp.values[-1])
    d_tk = effective_dimension(decomp.values, lambda_reg, T * K)
    d_t = effective_dimension(decomp.values, lambda_reg, T)
    b_nucb = nucb_bound(T, K, lambda_reg, d_tk, s_lb)
    b_nts = nts_bound(T, K, d_tk, s_lb)
    return BoundReport(
        T=T,
        K=K,
        lambda_reg=lambda_reg,
        lambda0=lambda0,
        kappa=condition_number(decomp),
        d_tilde=d_tk,
        d_tilde_t=d_t,
        xi=xi,
        s_lb=s_lb,
        h_norm=float(np.linalg.norm(h)),
        b_nucb=b_nucb,
        b_nts=b_nts,
        cert_nucb=bool(b_nucb >= xi * np.sqrt(K) * T - 1e-9),
        cert_nts=bool(b_nts >= T * np.sqrt(T) * K * lambda0 / (2.0 + lambda0) - 1e-9),
    )


# ---------------------------------------------------------------------------
# PL/QG ratio along a trajectory
# ---------------------------------------------------------------------------

def pl_ratio(loss: float, grad_norm_sq: float) -> float:
    """|grad L|^2 / (2 L): the per-point PL quotient (QG constant witness)."""
    if loss <= 0:
        raise DomainError("PL ratio needs a strictly positive loss")
    return grad_norm_sq / (2.0 * loss)


@dataclass
class PlCheckResult:
    pass_fraction: float
    mu_hat: float  # smallest observed ratio
    evaluated: int
    skipped: int


def pl_check(trajectory, snapshot: InitSnapshot, perts: PerturbationSet,
             cfg: PredictorConfig, mu_floor: float = 1e-3,
             loss_floor: float = 1e-6) -> PlCheckResult:
    """Fraction of trajectory points whose PL quotient clears mu_floor.

    Points with averaged loss below loss_floor are skipped (the quotient is
    numerically meaningless at an exact fit).
    """
    ratios = []
    skipped = 0
    for params, x, y in trajectory:
        loss, grad = averaged_loss_grad(params, snapshot, x, float(y), perts, cfg)
        if loss <= loss_floor:
            skipped += 1
            continue
        ratios.append(pl_ratio(loss, float(grad.flat @ grad.flat)))
    if not ratios:
        return PlCheckResult(pass_fraction=1.0, mu_hat=float("inf"), evaluated=0, skipped=skipped)
    ratios = np.array(ratios)
    return PlCheckResult(
        pass_fraction=float(np.mean(ratios >= mu_floor)),
        mu_hat=float(np.min(ratios)),
        evaluated=len(ratios),
        skipped=skipped,
    )


# ---------------------------------------------------------------------------
# Hessian spectral norm by power iteration on finite-difference HVPs
# ---------------------------------------------------------------------------

def hvp_fn(params: NetworkParams, x: np.ndarray):
    """Hessian-vector product of f at theta via central differences of backward."""
    base_scale = 1e-4 * (1.0 + params.norm())

    def hvp(u: np.ndarray) -> np.ndarray:
        step = base_scale / max(float(np.linalg.norm(u)), 1e-30)
        plus = NetworkParams(params.flat + step * u, params.dims, params.activation)
        minus = NetworkParams(params.flat - step * u, params.dims, params.activation)
        return (backward(plus, x).flat - backward(minus, x).flat) / (2.0 * step)

    return hvp


def spectral_norm_via_power(apply_fn, p: int, iterations: int, seed: int = 0) -> float:
    """Dominant |eigenvalue| of a symmetric operator by power iteration."""
    rng = np.random.Generator(np.random.Philox(key=np.random.SeedSequence(seed).generate_state(1, dtype=np.uint64)[0]))
    u = rng.standard_normal(p)
    u /= np.linalg.norm(u)
    estimate = 0.0
    for _ in range(max(iterations, 1)):
        w = apply_fn(u)
        norm_w = float(np.linalg.norm(w))
        if norm_w == 0.0:
            return 0.0
        estimate = abs(float(u @ w))
        u = w / norm_w
    return estimate


def hessian_norm_estimate(params: NetworkParams, x: np.ndarray, probes: int = 15,
                          seed: int = 0) -> float:
    """Spectral norm estimate of the Hessian of f(theta; x)."""
    return spectral_norm_via_power(hvp_fn(params, x), params.dims.p, probes, seed)


# ---------------------------------------------------------------------------
# Almost convexity, interpolation, gradient exactness
# ---------------------------------------------------------------------------

@dataclass
class AlmostConvexityResult:
    pass_fraction: float
    eps_hat: float  # worst observed violation of the first-order inequality
    pairs: int


def almost_convexity_check(snapshot: InitSnapshot, ball: BallSpec,
                           perts: PerturbationSet, cfg: PredictorConfig,
                           n_pairs: int, seed: int,
                           eps_tol: float = 1e-2) -> AlmostConvexityResult:
    """Sample in-ball pairs and test L(b) - L(a) - <b - a, grad L(a)> >= -eps_tol."""
    rng = np.random.Generator(np.random.Philox(key=np.random.SeedSequence(seed).generate_state(1, dtype=np.uint64)[0]))
    dims = snapshot.theta0.dims
    from .perturb import averaged_loss

    def sample_point():
        theta = snapshot.theta0.copy()
        for l in range(1, dims.L + 1):
            delta = rng.standard_normal(theta.hidden(l).shape)
            theta.hidden(l)[...] += delta * (ball.rho * rng.random() / np.linalg.norm(delta))
        dv = rng.standard_normal(dims.m)
        theta.v[:] += dv * (ball.rho1 * rng.random() / np.linalg.norm(dv))
        return theta

    margins = []
    for _ in range(n_pairs):
        a, b = sample_point(), sample_point()
        x = rng.standard_normal(dims.d)
        x /= np.linalg.norm(x)
        y = float(rng.uniform(0.05, 0.95))
        loss_a, grad_a = averaged_loss_grad(a, snapshot, x, y, perts, cfg)
        loss_b = averaged_loss(b, snapshot, x, y, perts, cfg)
        margins.append(loss_b - loss_a - float((b.flat - a.flat) @ grad_a.flat))
    margins = np.array(margins)
    return AlmostConvexityResult(
        pass_fraction=float(np.mean(margins >= -eps_tol)),
        eps_hat=float(max(0.0, -margins.min())),
        pairs=n_pairs,
    )


def interpolation_check(stream: RegressionStream, net_cfg: NetworkConfig,
                        cfg: OgdConfig, epochs: int, seed: int) -> float:
    """Residual total loss of an offline fit; small values certify interpolation.

    The perturbation ridge is switched off here: the interpolation property
    concerns the plain network output, and the ridge would add an
    irreducible spread across draws at any theta away from theta0.
    """
    plain = PredictorConfig(loss_kind=cfg.predictor.loss_kind, c_p=0.0, S=1,
                            z=cfg.predictor.z)
    cfg_plain = OgdConfig(mu=cfg.mu, T=cfg.T, ball=cfg.ball, predictor=plain)
    if len(stream) == 0:
        return 0.0
    return estimate_comparator(stream, net_cfg, cfg_plain, epochs, seed)


def gradient_check(snapshot: InitSnapshot, n_samples: int, seed: int,
                   displace: float = 0.1, fd_step: float = 1e-5,
                   coords_per_sample: int | None = None) -> float:
    """Max relative error of backward against central differences."""
    rng = np.random.Generator(np.random.Philox(key=np.random.SeedSequence(seed).generate_state(1, dtype=np.uint64)[0]))
    dims = snapshot.theta0.dims
    worst = 0.0
    for _ in range(n_samples):
        theta = snapshot.theta0.copy()
        theta.flat += displace * rng.standard_normal(dims.p)
        x = rng.standard_normal(dims.d)
        x /= np.linalg.norm(x)
        grad = backward(theta, x)
        if coords_per_sample is None or coords_per_sample >= dims.p:
            coords = range(dims.p)
        else:
            coords = rng.choice(dims.p, size=coords_per_sample, replace=False)
        for j in coords:
            plus, minus = theta.copy(), theta.copy()
            plus.flat[j] += fd_step
            minus.flat[j] -= fd_step
            fd = (forward(plus, x) - forward(minus, x)) / (2.0 * fd_step)
            denom = max(abs(fd), 1e-8)
            worst = max(worst, abs(grad.flat[j] - fd) / denom)
    return worst


@dataclass
class DiagnosticsReport:
    """Aggregated landscape witnesses for one configuration."""

    grad_check_max_rel_err: float
    hessian_norm_by_width: dict[int, float] = field(default_factory=dict)
    c_h_hat: float = 0.0                 # fitted constant in c/sqrt(m)
    grad_norm_bound: float = 0.0         # largest observed |grad f|
    loss_lipschitz_hat: float = 0.0      # largest observed |dl/df|
    strong_convexity_a: float = 1.0      # analytic for the square loss
    smoothness_b: float = 1.0            # analytic for the square loss
    pl_pass_fraction: float = 0.0
    pl_mu_hat: float = 0.0
    almost_convexity_eps_hat: float = 0.0
    almost_convexity_pass_fraction: float = 0.0
    interpolation_residual: float = 0.0

    def to_json(self, path):
        payload = asdict(self)
        payload["hessian_norm_by_width"] = {
            str(k): v for k, v in self.hessian_norm_by_width.items()
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
