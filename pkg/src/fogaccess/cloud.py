"""Centralised (C-RAN) processing: all AP signals are solved jointly in the cloud."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .amp import AmpConfig, run_mmv_amp
from .detect import DetectionResult, DetectorConfig, detect_from_beliefs
from .scenario import Observation


@dataclass
class CloudProblem:
    Y: np.ndarray  # (G, B*M_c), AP blocks in order
    S: np.ndarray  # (G, K)
    n_aps: int

    @property
    def n_antennas(self) -> int:
        return self.Y.shape[1] // self.n_aps

    def split(self) -> list:
        return [np.ascontiguousarray(r) for r in np.split(self.Y, self.n_aps, axis=1)]


def concatenate(observation: Observation, S) -> CloudProblem:
    """Stack the per-AP received blocks side by side."""
    G = {r.shape[0] for r in observation.per_ap}
    if len(G) != 1:
        raise ValueError(f"APs disagree on pilot length: {sorted(G)}")
    if S.shape[0] not in G:
        raise ValueError("pilot matrix rows do not match the received blocks")
    return CloudProblem(np.hstack(observation.per_ap), np.asarray(S), observation.n_aps)


def fronthaul_scalars(problem: CloudProblem) -> int:
    """Complex samples shipped from the RRHs to the cloud (G * M_c per AP)."""
    return int(problem.Y.size)


def cloud_detect(problem: CloudProblem, home_cell, amp_cfg: AmpConfig | None = None,
                 det_cfg: DetectorConfig = DetectorConfig(), with_trace=False) -> DetectionResult:
    """Global MMV-AMP with one sparsity ratio per user, then BI-AD on home antennas."""
    res = run_mmv_amp(problem.Y, problem.S, amp_cfg, refine="row", n_blocks=problem.n_aps,
                      with_trace=with_trace)
    out = detect_from_beliefs(res.pi, res.x_hat, home_cell, problem.n_antennas, res.iters, det_cfg)
    out.extra.update(fronthaul_scalars=fronthaul_scalars(problem), trace=res.trace, pi=res.pi)
    return out
