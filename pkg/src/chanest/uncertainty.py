"""Monte-Carlo dropout predictions and uncertainty metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientSamples, InvalidDistribution, InvalidParameter

# Variance floor inside the Gaussian entropy, keeps log() finite for zero spread.
VARIANCE_FLOOR = 1e-12

_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class McConfig:
    num_passes: int = 32
    seed: int = 0
    alpha: float = 0.05

    def __post_init__(self):
        if self.num_passes < 1:
            raise InvalidParameter(f"num_passes must be >= 1, got {self.num_passes}")
        if not 0 < self.alpha < 1:
            raise InvalidParameter(f"alpha must be in (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class McPrediction:
    """``samples`` has shape ``(T, ...)``; ``variance`` is the unbiased per-element variance.

    With a single pass the variance is undefined; it is reported as zeros and
    ``variance_defined`` is False.
    """

    samples: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    variance_defined: bool

    @property
    def num_passes(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class UncertaintySummary:
    scalar_variance: float
    scalar_entropy: float
    ci_halfwidth: np.ndarray


def pass_seed(base_seed: int, index: int) -> tuple:
    return (int(base_seed) & _SEED_MASK, index)


def mc_predict(net, x, cfg: McConfig = McConfig(), chunk: int = 8) -> McPrediction:
    """Run ``cfg.num_passes`` forward passes of ``net`` on one input with dropout on.

    Pass ``i`` draws its dropout masks from the seed ``(cfg.seed, i)``, so the
    masks do not depend on how passes are batched into chunks.
    """
    if cfg.num_passes < 1:
        raise InvalidParameter("num_passes must be >= 1")
    x = np.asarray(x)
    t = cfg.num_passes
    samples = []
    for s in range(0, t, chunk):
        idx = range(s, min(t, s + chunk))
        batch = np.broadcast_to(x, (len(idx),) + x.shape)
        samples.append(net.forward(batch, dropout_active=True,
                                   seed=[pass_seed(cfg.seed, i) for i in idx]))
    samples = np.concatenate(samples).astype(np.float64)
    mean = samples.mean(axis=0)
    if t >= 2:
        variance = samples.var(axis=0, ddof=1)
    else:
        variance = np.zeros_like(mean)
    return McPrediction(samples, mean, variance, t >= 2)


def sample_variance(values) -> float:
    """Unbiased sample variance ``sum((y - mean)**2) / (T - 1)``."""
    y = np.asarray(values, dtype=float).ravel()
    if y.size < 2:
        raise InsufficientSamples(f"sample variance needs at least 2 values, got {y.size}")
    return float(np.sum((y - y.mean()) ** 2) / (y.size - 1))


# Acklam's rational approximation of the inverse standard normal CDF.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def norm_ppf(p: float) -> float:
    """Inverse standard normal CDF (Acklam), relative error below 1.15e-9."""
    if not 0 < p < 1:
        raise InvalidParameter(f"probability must be in (0, 1), got {p}")
    if p < _P_LOW:
        q = math.sqrt(-2 * math.log(p))
        return ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
                / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1))
    if p > 1 - _P_LOW:
        return -norm_ppf(1 - p)
    q = p - 0.5
    r = q * q
    return ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
            / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1))


def z_critical(alpha: float) -> float:
    if not 0 < alpha < 1:
        raise InvalidParameter(f"alpha must be in (0, 1), got {alpha}")
    return norm_ppf(1 - alpha / 2)


def confidence_interval(values, alpha: float = 0.05) -> tuple:
    """Normal-approximation interval ``mean -/+ z * S / sqrt(T)``."""
    z = z_critical(alpha)
    y = np.asarray(values, dtype=float).ravel()
    s = math.sqrt(sample_variance(y))
    half = z * s / math.sqrt(y.size)
    m = float(y.mean())
    return (m - half, m + half)


def predictive_entropy(probs) -> float:
    """Shannon entropy (nats) of a discrete distribution, with ``0 log 0 = 0``."""
    p = np.asarray(probs, dtype=float).ravel()
    if p.size == 0 or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
        raise InvalidDistribution("probabilities must be non-negative and sum to 1")
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def gaussian_entropy(variance) -> np.ndarray:
    """Differential entropy of a normal distribution with the given (floored) variance."""
    return 0.5 * np.log(2 * math.pi * math.e * (np.asarray(variance) + VARIANCE_FLOOR))


def summarize(pred: McPrediction, alpha: float = 0.05) -> UncertaintySummary:
    """Reduce an MC prediction to scalar variance, mean Gaussian entropy and per-element CI half-widths."""
    if not pred.variance_defined or pred.num_passes < 2:
        raise InsufficientSamples("uncertainty summary needs at least 2 MC passes")
    z = z_critical(alpha)
    return UncertaintySummary(
        scalar_variance=float(np.mean(pred.variance)),
        scalar_entropy=float(np.mean(gaussian_entropy(pred.variance))),
        ci_halfwidth=z * np.sqrt(pred.variance) / math.sqrt(pred.num_passes),
    )
