"""Belief-indicator activity detection and the P_e / NMSE metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NMSE_FLOOR_DB = -300.0


@dataclass(frozen=True)
class DetectorConfig:
    epsilon_bi: float = 0.5
    p_bi: float = 0.9

    def __post_init__(self):
        if not 0.0 < self.epsilon_bi < 1.0:
            raise ValueError("epsilon_bi must lie in (0, 1)")
        if not 0.0 < self.p_bi <= 1.0:
            raise ValueError("p_bi must lie in (0, 1]")


@dataclass
class DetectionResult:
    alpha_hat: np.ndarray  # (K,) int8
    X_hat: np.ndarray  # (K, M); rows of undetected users are zero
    iters: int
    belief_summary: np.ndarray  # (K,) antenna-mean belief at the home AP
    extra: dict = field(default_factory=dict)

    def same_as(self, other: "DetectionResult") -> bool:
        """Bit-level equality of every array and the iteration count."""
        return (
            self.iters == other.iters
            and np.array_equal(self.alpha_hat, other.alpha_hat)
            and self.X_hat.shape == other.X_hat.shape
            and self.X_hat.tobytes() == other.X_hat.tobytes()
            and self.belief_summary.tobytes() == other.belief_summary.tobytes()
        )


def bi_ad(pi_block, cfg: DetectorConfig = DetectorConfig()) -> int:
    """1 if at least a fraction p_bi of the beliefs exceed epsilon_bi."""
    pi_block = np.asarray(pi_block, dtype=float)
    if pi_block.size < 1:
        raise ValueError("need at least one belief")
    return int(np.mean(pi_block > cfg.epsilon_bi) >= cfg.p_bi)


def bi_ad_rows(pi_blocks, cfg: DetectorConfig = DetectorConfig()) -> np.ndarray:
    """Vectorised ``bi_ad`` over the rows of a (K, M_c) belief array."""
    pi_blocks = np.asarray(pi_blocks, dtype=float)
    return (np.mean(pi_blocks > cfg.epsilon_bi, axis=1) >= cfg.p_bi).astype(np.int8)


def home_blocks(pi, home_cell, n_antennas):
    """For each user, the beliefs on its home AP's antennas, shape (K, M_c)."""
    cols = np.asarray(home_cell)[:, None] * n_antennas + np.arange(n_antennas)
    return np.take_along_axis(np.asarray(pi), cols, axis=1)


def detect_from_beliefs(pi, x_hat, home_cell, n_antennas, iters, cfg: DetectorConfig = DetectorConfig(),
                        ) -> DetectionResult:
    """Apply BI-AD on the home-AP block of every user and zero undetected rows."""
    blocks = home_blocks(pi, home_cell, n_antennas)
    alpha = bi_ad_rows(blocks, cfg)
    X_hat = np.where(alpha[:, None] == 1, x_hat, 0)
    return DetectionResult(alpha, X_hat, iters, blocks.mean(axis=1))


@dataclass(frozen=True)
class ErrorRates:
    pe: float
    miss: float  # missed detections / K
    false_alarm: float  # false alarms / K

    def __float__(self):
        return self.pe


def error_probability(alpha_hat, alpha_true) -> ErrorRates:
    a_hat = np.asarray(alpha_hat).astype(int)
    a = np.asarray(alpha_true).astype(int)
    if a_hat.shape != a.shape:
        raise ValueError(f"length mismatch: {a_hat.shape} vs {a.shape}")
    K = a.size
    miss = np.count_nonzero((a == 1) & (a_hat == 0))
    fa = np.count_nonzero((a == 0) & (a_hat == 1))
    return ErrorRates((miss + fa) / K, miss / K, fa / K)


def nmse_db(X_hat, X_true) -> float:
    """10 log10(||X_hat - X||^2 / ||X||^2), floored at -300 dB."""
    X_hat, X_true = np.asarray(X_hat), np.asarray(X_true)
    if X_hat.shape != X_true.shape:
        raise ValueError(f"shape mismatch: {X_hat.shape} vs {X_true.shape}")
    ref = np.sum(np.abs(X_true) ** 2)
    if ref == 0:
        raise ValueError("reference channel matrix is all zero")
    err = np.sum(np.abs(X_hat - X_true) ** 2)
    if err == 0:
        return NMSE_FLOOR_DB
    return max(float(10.0 * np.log10(err / ref)), NMSE_FLOOR_DB)


def nmse_active_db(X_hat, X_true, alpha_true) -> float:
    """NMSE over the rows of truly active users only."""
    rows = np.flatnonzero(alpha_true)
    return nmse_db(np.asarray(X_hat)[rows], np.asarray(X_true)[rows])
