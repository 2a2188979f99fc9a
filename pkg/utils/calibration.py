"""
Threshold calibration oracle for the encrypted-domain matcher.

Genuine pairs: an enrolled template uniform in [-spread, +spread] against a
re-capture with per-coordinate noise in [-noise, +noise]. Impostor pairs: two
independent uniform templates. Every pair is scrambled under a derived key
before scoring, so the oracle measures the matcher exactly as validators run it.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Tuple

import numpy as np

from utils.biometrics import derive_key
from utils.constants import (
    CALIBRATION_SEED,
    CALIBRATION_TRIALS,
    GENUINE_NOISE,
    INT16_MAX,
    INT16_MIN,
    TEMPLATE_DIM,
    TEMPLATE_SPREAD,
)
from utils.rng import substream

logger = logging.getLogger(__name__)

BATCH_SIZE = 10_000


@dataclass(frozen=True)
class CalibrationResult:
    trials: int
    seed: int
    genuine_max: int
    impostor_min: int
    threshold: int
    fnmr: float
    fmr: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            'trials': self.trials,
            'seed': self.seed,
            'genuine_max': self.genuine_max,
            'impostor_min': self.impostor_min,
            'threshold': self.threshold,
            'fnmr': self.fnmr,
            'fmr': self.fmr,
        }


def _scramble_batch(batch: np.ndarray, permutation: np.ndarray, signs: np.ndarray) -> np.ndarray:
    return batch[:, permutation] * signs


def _squared_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a - b
    return np.einsum('ij,ij->i', diff, diff)


def monte_carlo_scores(trials: int = CALIBRATION_TRIALS, seed: int = CALIBRATION_SEED,
                       noise: int = GENUINE_NOISE, spread: int = TEMPLATE_SPREAD) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw genuine and impostor match scores.

    Args:
        trials: Number of pairs of each kind
        seed: Seed for the template, noise and key streams
        noise: Genuine re-capture noise bound
        spread: Template coordinate bound

    Returns:
        (genuine_scores, impostor_scores) as int64 arrays of length trials
    """
    key = derive_key(seed, 0)
    permutation = np.asarray(key.permutation, dtype=np.int64)
    signs = np.asarray(key.signs, dtype=np.int64)
    templates = substream(seed, "templates")
    jitter = substream(seed, "noise")
    impostors = substream(seed, "impostors")

    genuine, impostor = [], []
    remaining = trials
    while remaining > 0:
        size = min(BATCH_SIZE, remaining)
        enrolled = templates.integers(-spread, spread + 1, size=(size, TEMPLATE_DIM), dtype=np.int64)
        probes = np.clip(enrolled + jitter.integers(-noise, noise + 1, size=(size, TEMPLATE_DIM), dtype=np.int64),
                         INT16_MIN, INT16_MAX)
        others = impostors.integers(-spread, spread + 1, size=(size, TEMPLATE_DIM), dtype=np.int64)

        enrolled_s = _scramble_batch(enrolled, permutation, signs)
        genuine.append(_squared_distances(enrolled_s, _scramble_batch(probes, permutation, signs)))
        impostor.append(_squared_distances(enrolled_s, _scramble_batch(others, permutation, signs)))
        remaining -= size

    return np.concatenate(genuine), np.concatenate(impostor)


def rates(genuine: np.ndarray, impostor: np.ndarray, threshold: int) -> Tuple[float, float]:
    """(FNMR, FMR) at the given threshold under accept-iff-score<=threshold."""
    fnmr = float(np.mean(genuine > threshold)) if len(genuine) else 0.0
    fmr = float(np.mean(impostor <= threshold)) if len(impostor) else 0.0
    return fnmr, fmr


def calibrate(trials: int = CALIBRATION_TRIALS, seed: int = CALIBRATION_SEED) -> CalibrationResult:
    genuine, impostor = monte_carlo_scores(trials, seed)
    return operating_point(genuine, impostor, seed)


def operating_point(genuine: np.ndarray, impostor: np.ndarray, seed: int = CALIBRATION_SEED) -> CalibrationResult:
    """Midpoint between the largest genuine and the smallest impostor score."""
    trials = len(genuine)
    genuine_max = int(genuine.max())
    impostor_min = int(impostor.min())
    threshold = (genuine_max + impostor_min) // 2
    fnmr, fmr = rates(genuine, impostor, threshold)
    logger.info(f"✅ Calibrated over {trials} pairs: genuine max {genuine_max}, "
                f"impostor min {impostor_min}, threshold {threshold}")
    return CalibrationResult(trials, seed, genuine_max, impostor_min, threshold, fnmr, fmr)
