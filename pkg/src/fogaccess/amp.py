"""MMV-AMP with a spike-and-slab prior and EM hyper-parameter learning.

Shapes: S is (G, K), Y is (G, M), every per-coefficient quantity is (K, M),
every per-measurement quantity is (G, M). The noise variance is kept per
column, shape (M,).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

GAMMA_MIN = 1e-8
SIGMA_MIN = 1e-12
TAU_MIN = 1e-12
D_MIN = 1e-15
DIVERGENCE_RATIO = 1e6


class DivergenceError(RuntimeError):
    """The residual blew up relative to the initial residual."""


@dataclass
class AmpConfig:
    t_max: int = 200
    epsilon: float = 1e-5
    gamma_init: float = 0.1
    snr_init: float = 100.0
    likelihood_form: str = "complex"  # complex | real
    scalar_sigma: bool = False
    damping: float = 0.0
    # "global": one sigma0 and tau from the whole of Y; "column": one per column of Y
    hyper_init: str = "global"
    # rescale Y by a power of two so the numeric floors sit far below the data
    normalize: bool = True

    def __post_init__(self):
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not 0.0 <= self.damping <= 0.5:
            raise ValueError("damping must lie in [0, 0.5]")
        if self.likelihood_form not in ("complex", "real"):
            raise ValueError(f"unknown likelihood_form {self.likelihood_form!r}")
        if not 0.0 < self.gamma_init < 1.0:
            raise ValueError("gamma_init must lie in (0, 1)")
        if self.hyper_init not in ("global", "column"):
            raise ValueError(f"unknown hyper_init {self.hyper_init!r}")


@dataclass
class Prior:
    """Spike at zero with probability 1 - gamma, CN(mu, tau) slab otherwise."""

    gamma: np.ndarray
    mu: complex = 0.0
    tau: float = 1.0

    def __post_init__(self):
        if not np.all(np.asarray(self.tau) > 0):
            raise ValueError("slab variance tau must be positive")
        g = np.asarray(self.gamma)
        if np.any(g < 0) or np.any(g > 1):
            raise ValueError("sparsity ratios must lie in [0, 1]")


@dataclass
class AmpState:
    V: np.ndarray
    Z: np.ndarray
    x_hat: np.ndarray
    v: np.ndarray
    gamma: np.ndarray
    sigma: np.ndarray
    tau: float | np.ndarray
    mu: complex = 0.0
    C: np.ndarray | None = None
    D: np.ndarray | None = None
    pi: np.ndarray | None = None
    iter: int = 0
    delta: float = np.inf  # squared change of x_hat in the last iteration
    prev_norm: float = 0.0  # squared norm of x_hat before the last iteration

    def check(self):
        for name in ("V", "Z", "x_hat", "v", "C", "D", "pi"):
            a = getattr(self, name)
            if a is not None and not np.all(np.isfinite(a)):
                raise FloatingPointError(f"non-finite values in {name}")
        assert np.all(self.V >= 0) and np.all(self.v >= 0)
        if self.D is not None:
            assert np.all(self.D > 0)
        if self.pi is not None:
            assert np.all((self.pi >= 0) & (self.pi <= 1))


@dataclass
class AmpResult:
    x_hat: np.ndarray
    pi: np.ndarray
    iters: int
    sigma: np.ndarray
    trace: list = field(default_factory=list)


# --------------------------------------------------------------------------
# message updates

def factor_update(S, x_hat, v, Y, Z_prev, V_prev, sigma, S_abs2=None):
    """Factor-node update with Onsager correction; returns (V, Z)."""
    if S_abs2 is None:
        S_abs2 = np.abs(S) ** 2
    denom = sigma + V_prev
    if np.any(denom <= 0):
        raise FloatingPointError("sigma + V_prev must be positive")
    V = S_abs2 @ v
    Z = S @ x_hat - V / denom * (Y - Z_prev)
    return V, Z


def variable_update(S, Y, Z, V, x_hat, sigma, S_abs2=None):
    """Variable-node update; returns the pseudo-measurement C and its variance D."""
    if S_abs2 is None:
        S_abs2 = np.abs(S) ** 2
    W = 1.0 / (sigma + V)
    prec = S_abs2.T @ W
    if np.any(prec <= 0):
        dead = np.flatnonzero(~np.any(S_abs2 > 0, axis=0))
        raise ValueError(f"pilot column(s) {dead.tolist()} are all zero")
    D = np.maximum(1.0 / prec, D_MIN)
    C = x_hat + D * (S.conj().T @ ((Y - Z) * W))
    return C, D


def log_likelihood_ratio(C, D, tau, mu=0.0, form="complex"):
    """Log-ratio of slab vs. spike evidence for the scalar channel C = x + CN(0, D)."""
    C2 = np.abs(C) ** 2
    R2 = np.abs(C - mu) ** 2
    if form == "complex":
        return np.log(D / (D + tau)) + C2 / D - R2 / (D + tau)
    if form == "real":
        return 0.5 * np.log(D / (D + tau)) + C2 / (2 * D) - R2 / (2 * (D + tau))
    raise ValueError(f"unknown likelihood form {form!r}")


def belief_indicator(gamma, llr):
    """gamma / (gamma + (1 - gamma) exp(-llr)), evaluated in the log domain."""
    gamma = np.asarray(gamma, dtype=float)
    with np.errstate(divide="ignore"):
        logit = llr + np.log(gamma) - np.log1p(-gamma)
    return expit(logit)


def denoise(C, D, prior: Prior, form="complex"):
    """Spike-and-slab MMSE denoiser.

    Returns ``(x_hat, v, pi, A, B)``: posterior mean and variance, belief
    indicator, and mean/variance of the slab component of the posterior.
    """
    tau, mu = prior.tau, prior.mu
    A = (tau * C + mu * D) / (D + tau)
    B = tau * D / (tau + D)
    pi = belief_indicator(prior.gamma, log_likelihood_ratio(C, D, tau, mu, form))
    x_hat = pi * A
    # pi(|A|^2 + B) - |pi A|^2 rearranged so it cannot go negative
    v = pi * (1.0 - pi) * np.abs(A) ** 2 + pi * B
    return x_hat, v, pi, A, B


def em_update_sparsity(pi):
    return np.clip(pi, GAMMA_MIN, 1.0 - GAMMA_MIN)


def em_update_noise(Y, Z, V, sigma_prev, scalar=False):
    """EM noise-variance update, one value per column (or one overall if ``scalar``)."""
    sigma_prev = np.asarray(sigma_prev, dtype=float)
    if np.any(sigma_prev <= 0):
        raise ValueError("previous noise variance must be positive")
    terms = np.abs(Y - Z) ** 2 / np.abs(1.0 + V / sigma_prev) ** 2 + sigma_prev * V / (sigma_prev + V)
    sigma = terms.mean(axis=0)
    if scalar:
        sigma = np.full_like(sigma, sigma.mean())
    return np.maximum(sigma, SIGMA_MIN)


def block_row_mean(pi, n_blocks=1):
    """Per-row mean of each of ``n_blocks`` equal column blocks, shape (K, n_blocks)."""
    K, M = pi.shape
    if n_blocks < 1 or M % n_blocks:
        raise ValueError(f"{M} columns cannot be split into {n_blocks} equal blocks")
    return pi.reshape(K, n_blocks, M // n_blocks).mean(axis=2)


def refine_sparsity_common(pi, neighborhoods="row", n_blocks=1):
    """Replace every sparsity ratio by the mean belief over its neighborhood.

    ``neighborhoods`` is ``"row"`` (all M entries of the same user),
    ``"element"`` (singletons) or a list assigning each column a list of
    columns in the same row. For ``"row"`` the mean is taken as the mean of
    ``n_blocks`` per-block means, which is the same number mathematically and
    lets an AP-partitioned computation reproduce it bit for bit.
    """
    pi = np.asarray(pi, dtype=float)
    K, M = pi.shape
    if isinstance(neighborhoods, str):
        if neighborhoods == "element":
            return em_update_sparsity(pi)
        if neighborhoods != "row":
            raise ValueError(f"unknown neighborhood {neighborhoods!r}")
        row = block_row_mean(pi, n_blocks).mean(axis=1)
        return em_update_sparsity(np.repeat(row[:, None], M, axis=1))
    if len(neighborhoods) != M:
        raise ValueError("need one neighborhood per column")
    gamma = np.empty_like(pi)
    for m, nb in enumerate(neighborhoods):
        if len(nb) == 0:
            raise ValueError(f"empty neighborhood for column {m}")
        gamma[:, m] = pi[:, list(nb)].mean(axis=1)
    return em_update_sparsity(gamma)


# --------------------------------------------------------------------------
# driver

def power_of_two_scale(Y) -> float:
    """2**n bringing the RMS of Y close to one; multiplying by it is exact."""
    rms = np.sqrt(np.mean(np.abs(Y) ** 2)) if np.size(Y) else 0.0
    if not np.isfinite(rms) or rms == 0:
        return 1.0
    return float(2.0 ** -np.round(np.log2(rms)))


def init_state(Y, S, cfg: AmpConfig) -> AmpState:
    """Hyper-parameters from measurement energy; V=1, Z=Y, x_hat=0, v=tau.

    With ``hyper_init="column"`` sigma0 and tau are computed per column of Y,
    tau then has shape (1, M) and broadcasts over users.
    """
    G, M = Y.shape
    K = S.shape[1]
    s_energy = float(np.sum(np.abs(S) ** 2))
    if cfg.hyper_init == "column":
        energy = np.sum(np.abs(Y) ** 2, axis=0)
        sigma0 = np.maximum(energy / ((cfg.snr_init + 1.0) * G), SIGMA_MIN)
        if s_energy > 0:
            tau = np.maximum((energy - G * sigma0) / (s_energy * cfg.gamma_init), TAU_MIN)[None, :]
        else:
            tau = np.full((1, M), TAU_MIN)
        sigma = sigma0
    else:
        energy = float(np.sum(np.abs(Y) ** 2))
        sigma0 = max(energy / ((cfg.snr_init + 1.0) * G * M), SIGMA_MIN)
        tau = (energy - G * M * sigma0) / (s_energy * cfg.gamma_init * M) if s_energy > 0 else 0.0
        tau = max(tau, TAU_MIN)
        sigma = np.full(M, sigma0)
    return AmpState(
        V=np.ones((G, M)),
        Z=Y.copy(),
        x_hat=np.zeros((K, M), dtype=complex),
        v=np.broadcast_to(tau, (K, M)).astype(float),
        gamma=np.full((K, M), cfg.gamma_init),
        sigma=sigma,
        tau=tau,
    )


def amp_iteration(state: AmpState, Y, S, cfg: AmpConfig, S_abs2=None) -> AmpState:
    """One pass of factor update, variable update, denoising and EM.

    The returned state carries the per-element EM sparsity ratio; callers
    overwrite ``gamma`` with their refinement before the next pass.
    """
    if S_abs2 is None:
        S_abs2 = np.abs(S) ** 2
    V, Z = factor_update(S, state.x_hat, state.v, Y, state.Z, state.V, state.sigma, S_abs2)
    C, D = variable_update(S, Y, Z, V, state.x_hat, state.sigma, S_abs2)
    prior = Prior(state.gamma, state.mu, state.tau)
    x_new, v_new, pi, _, _ = denoise(C, D, prior, cfg.likelihood_form)
    if cfg.damping:
        x_new = (1.0 - cfg.damping) * x_new + cfg.damping * state.x_hat
    sigma = em_update_noise(Y, Z, V, state.sigma, cfg.scalar_sigma)
    return AmpState(
        V=V, Z=Z, x_hat=x_new, v=v_new,
        gamma=em_update_sparsity(pi), sigma=sigma, tau=state.tau, mu=state.mu,
        C=C, D=D, pi=pi, iter=state.iter + 1,
        delta=float(np.sum(np.abs(x_new - state.x_hat) ** 2)),
        prev_norm=float(np.sum(np.abs(state.x_hat) ** 2)),
    )


def converged(state: AmpState, cfg: AmpConfig) -> bool:
    if np.isinf(cfg.epsilon):
        return True
    return state.delta < cfg.epsilon * state.prev_norm


def residual_norm(Y, S, x_hat) -> float:
    return float(np.linalg.norm(Y - S @ x_hat))


def make_refiner(refine, n_blocks=1):
    """Turn a refinement choice into a callable ``(state) -> gamma``."""
    if callable(refine):
        return refine
    if refine == "element":
        return lambda st: st.gamma
    if refine == "row":
        return lambda st: refine_sparsity_common(st.pi, "row", n_blocks)
    raise ValueError(f"unknown refinement {refine!r}")


def run_mmv_amp(Y, S, cfg: AmpConfig | None = None, refine="row", n_blocks=1,
                with_trace=False) -> AmpResult:
    """Iterate MMV-AMP until the relative change of x_hat drops below epsilon.

    ``refine`` selects the sparsity-ratio update: ``"element"`` (plain EM),
    ``"row"`` (one ratio per user) or a callable receiving the post-EM state
    and returning the new gamma matrix.
    """
    cfg = cfg or AmpConfig()
    Y = np.asarray(Y)
    S = np.asarray(S)
    if Y.shape[0] != S.shape[0]:
        raise ValueError(f"Y has {Y.shape[0]} rows but S has {S.shape[0]}")
    scale = power_of_two_scale(Y) if cfg.normalize else 1.0
    Yn = Y * scale
    S_abs2 = np.abs(S) ** 2
    refiner = make_refiner(refine, n_blocks)

    state = init_state(Yn, S, cfg)
    res0 = max(residual_norm(Yn, S, state.x_hat), np.finfo(float).tiny)
    trace = []
    while True:
        state = amp_iteration(state, Yn, S, cfg, S_abs2)
        state.gamma = refiner(state)
        res = residual_norm(Yn, S, state.x_hat)
        if not np.isfinite(res) or res > DIVERGENCE_RATIO * res0:
            raise DivergenceError(f"residual grew to {res:.3g} (initial {res0:.3g}) at iteration {state.iter}")
        if with_trace:
            trace.append({"iter": state.iter, "residual": res / scale, "mean_pi": float(state.pi.mean()),
                          "sigma_est": float(state.sigma.mean()) / scale**2})
        if state.iter >= cfg.t_max or converged(state, cfg):
            break
    return AmpResult(state.x_hat / scale, state.pi, state.iter, state.sigma / scale**2, trace)


def write_trace(trace, path_or_file) -> None:
    """Dump a diagnostic trace as CSV (iter, residual, mean_pi, sigma_est)."""
    cols = ["iter", "residual", "mean_pi", "sigma_est"]

    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in trace:
            w.writerow([row["iter"]] + [repr(float(row[c])) for c in cols[1:]])

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with open(path_or_file, "w", newline="", encoding="utf-8") as fh:
            _write(fh)


__all__ = [
    "AmpConfig", "AmpResult", "AmpState", "DivergenceError", "Prior",
    "amp_iteration", "belief_indicator", "block_row_mean", "converged", "denoise",
    "em_update_noise", "em_update_sparsity", "factor_update", "init_state",
    "log_likelihood_ratio", "make_refiner", "refine_sparsity_common", "run_mmv_amp",
    "variable_update", "write_trace",
]
