"""Fog (F-RAN) processing: local AMP at every F-AP, sparsity ratios shared
only among each user's closest F-APs.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .amp import (DIVERGENCE_RATIO, AmpConfig, DivergenceError, amp_iteration, em_update_sparsity,
                  init_state, power_of_two_scale, residual_norm)
from .detect import DetectionResult, DetectorConfig, detect_from_beliefs
from .scenario import NetworkLayout, Observation, UserPopulation, distances


@dataclass
class AssociationMap:
    sets: np.ndarray  # (K, N_co) AP indices, ascending within each row
    n_aps: int

    @property
    def n_co(self) -> int:
        return self.sets.shape[1]

    def member_mask(self) -> np.ndarray:
        """(K, B) boolean, True where AP b cooperates for user k."""
        mask = np.zeros((self.sets.shape[0], self.n_aps), dtype=bool)
        np.put_along_axis(mask, self.sets, True, axis=1)
        return mask


def associate_faps(population: UserPopulation, layout: NetworkLayout, n_co: int) -> AssociationMap:
    """Each user picks its ``n_co`` nearest F-APs; ties go to the lower AP index."""
    B = layout.n_cells
    if not 1 <= n_co <= B:
        raise ValueError(f"n_co={n_co} must lie in [1, {B}]")
    d = distances(layout, population)
    nearest = np.argsort(d, axis=1, kind="stable")[:, :n_co]
    return AssociationMap(np.sort(nearest, axis=1), B)


def local_refine(pi_b) -> np.ndarray:
    """Antenna-mean belief of every user at one F-AP, shape (K,)."""
    return np.asarray(pi_b).mean(axis=1)


def joint_refine(pi_tilde, assoc: AssociationMap) -> np.ndarray:
    """Mean of the local beliefs over each user's cooperating F-APs, shape (K,).

    The reduction runs over AP indices in ascending order, so the result does
    not depend on the order in which F-APs reported.
    """
    if assoc.n_co < 1:
        raise ValueError("empty cooperation set")
    return np.take_along_axis(np.asarray(pi_tilde), assoc.sets, axis=1).mean(axis=1)


@dataclass
class FogStats:
    uploads: int = 0
    downloads: int = 0
    rounds: int = 0

    @property
    def total(self) -> int:
        return self.uploads + self.downloads


def run_fog(observation: Observation, S, assoc: AssociationMap, home_cell,
            amp_cfg: AmpConfig | None = None, det_cfg: DetectorConfig = DetectorConfig(),
            stop="epsilon", fap_workers=1, message_log=None, gamma_log=None,
            trace=None) -> DetectionResult:
    """Fog deployment of MMV-AMP.

    Every iteration each F-AP runs one local AMP pass on its own block, the
    per-user antenna-mean beliefs are averaged over the cooperating F-APs,
    and all F-APs wait for the new ratios before the next pass.

    stop:
        ``"epsilon"`` stops on the same relative-change test as the central
        solver (summed over F-APs); ``"tmax"`` runs exactly ``t_max`` passes.
    message_log:
        optional writable text file receiving CSV rows (iter, fap, user, pi_tilde).
    gamma_log:
        optional list that receives the (K, M_c) gamma matrix applied at each
        F-AP after every iteration.
    trace:
        optional list that receives one dict per iteration (iter, residual,
        mean_pi, sigma_est), aggregated over F-APs.
    """
    cfg = amp_cfg or AmpConfig()
    if stop not in ("epsilon", "tmax"):
        raise ValueError(f"unknown stop rule {stop!r}")
    S = np.asarray(S)
    S_abs2 = np.abs(S) ** 2
    B = observation.n_aps
    if assoc.n_aps != B:
        raise ValueError("association map built for a different number of F-APs")
    K = S.shape[1]
    M_c = observation.per_ap[0].shape[1]
    scales = [power_of_two_scale(r) if cfg.normalize else 1.0 for r in observation.per_ap]
    Ys = [r * s for r, s in zip(observation.per_ap, scales)]
    states = [init_state(y, S, cfg) for y in Ys]
    res0 = [max(residual_norm(y, S, st.x_hat), np.finfo(float).tiny) for y, st in zip(Ys, states)]
    member = assoc.member_mask()
    stats = FogStats()
    writer = csv.writer(message_log, lineterminator="\n") if message_log is not None else None
    if writer is not None:
        writer.writerow(["iter", "fap", "user", "pi_tilde"])

    def local_pass(b):
        return amp_iteration(states[b], Ys[b], S, cfg, S_abs2)

    pool = ThreadPoolExecutor(fap_workers) if fap_workers > 1 else None
    try:
        while True:
            states = list(pool.map(local_pass, range(B))) if pool else [local_pass(b) for b in range(B)]
            # barrier: every F-AP has finished its local pass
            pi_tilde = np.column_stack([local_refine(st.pi) for st in states])
            gamma_k = joint_refine(pi_tilde, assoc)
            resid = np.zeros(B)
            stats.rounds += 1
            stats.uploads += int(member.sum())
            stats.downloads += int(member.sum())
            for b, st in enumerate(states):
                g = np.where(member[:, b], gamma_k, pi_tilde[:, b])
                st.gamma = em_update_sparsity(np.repeat(g[:, None], M_c, axis=1))
                if gamma_log is not None:
                    gamma_log.append((b, st.gamma.copy()))
                res = residual_norm(Ys[b], S, st.x_hat)
                if not np.isfinite(res) or res > DIVERGENCE_RATIO * res0[b]:
                    raise DivergenceError(f"F-AP {b} diverged at iteration {st.iter}")
                resid[b] = res / scales[b]
            if trace is not None:
                trace.append({"iter": states[0].iter, "residual": float(np.sqrt(np.sum(resid ** 2))),
                              "mean_pi": float(np.mean([st.pi.mean() for st in states])),
                              "sigma_est": float(np.mean([st.sigma.mean() / s**2 for st, s in zip(states, scales)]))})
            if writer is not None:
                for k, b in zip(*np.nonzero(member)):
                    writer.writerow([stats.rounds, int(b), int(k), repr(float(pi_tilde[k, b]))])
            q = states[0].iter
            if q >= cfg.t_max:
                break
            if stop == "epsilon":
                delta = sum(st.delta for st in states)
                prev = sum(st.prev_norm for st in states)
                if np.isinf(cfg.epsilon) or delta < cfg.epsilon * prev:
                    break
    finally:
        if pool is not None:
            pool.shutdown()

    x_hat = np.hstack([st.x_hat / s for st, s in zip(states, scales)])
    pi = np.hstack([st.pi for st in states])
    out = detect_from_beliefs(pi, x_hat, home_cell, M_c, states[0].iter, det_cfg)
    out.extra.update(fronthaul_scalars=stats.total, fog_stats=stats, pi=pi)
    assert x_hat.shape == (K, B * M_c)
    return out
