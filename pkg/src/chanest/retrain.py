"""Uncertainty-aware adversarial retraining of the channel estimator.

Each iteration scores the validation set with MC-dropout entropy, perturbs
the most uncertain inputs with FGSM and retrains (warm start) on the training
set augmented with those adversarial examples, or with the raw validation
set in ``literal`` mode.  The loop stops after ``max_iterations`` or once
the validation MSE drops below ``tolerance``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .dataset import Dataset, DatasetExample, with_meta
from .errors import InvalidParameter, ShapeMismatch
from .nn import NeuralNet, TrainConfig, evaluate_mse, grids_to_tensor, tensor_to_grids, train
from .uncertainty import McConfig, mc_predict, summarize

MODES = ("adversarial_only", "literal_D_union_V")


@dataclass(frozen=True)
class RetrainConfig:
    max_iterations: int = 5
    tolerance: float = 1e-6
    uncertain_fraction: float = 0.2
    # Relative to the network's input scale when None.
    fgsm_epsilon: Optional[float] = None
    augmentation_mode: str = "adversarial_only"
    train: TrainConfig = field(default_factory=lambda: TrainConfig(max_epochs=20))

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidParameter("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise InvalidParameter("tolerance must be positive")
        if not 0 < self.uncertain_fraction <= 1:
            raise InvalidParameter("uncertain_fraction must be in (0, 1]")
        if self.fgsm_epsilon is not None and self.fgsm_epsilon < 0:
            raise InvalidParameter("fgsm_epsilon must be >= 0")
        if self.augmentation_mode not in MODES:
            raise InvalidParameter(f"augmentation_mode must be one of {MODES}")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    selected: tuple
    val_mse_before: float
    val_mse_after: float
    mean_uncertainty_before: float
    mean_uncertainty_after: float
    trainset_size: int

    @property
    def num_selected(self) -> int:
        return len(self.selected)


def score_uncertainty(net: NeuralNet, examples, mc: McConfig = McConfig()) -> np.ndarray:
    """Mean Gaussian entropy of the MC-dropout prediction, one score per example."""
    examples = list(examples)
    if not examples:
        raise InvalidParameter("cannot score an empty set")
    scores = np.empty(len(examples))
    for i, e in enumerate(examples):
        scores[i] = summarize(mc_predict(net, grids_to_tensor(e.input), mc), mc.alpha).scalar_entropy
    return scores


def select_uncertain(scores, fraction: float) -> np.ndarray:
    """Indices of the ``ceil(fraction * N)`` highest scores; ties go to the lower index."""
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        raise InvalidParameter("no scores to select from")
    if not 0 < fraction <= 1:
        raise InvalidParameter(f"fraction must be in (0, 1], got {fraction}")
    k = math.ceil(fraction * s.size)
    order = np.lexsort((np.arange(s.size), -s))
    return np.sort(order[:k])


def fgsm_perturbation(net: NeuralNet, x, target, epsilon: float) -> np.ndarray:
    """``epsilon * sign(d MSE / d x)`` for a real input tensor."""
    if epsilon < 0:
        raise InvalidParameter("epsilon must be >= 0")
    _, _, dx = net.backward(x, target)
    return epsilon * np.sign(dx.astype(np.float64))


def fgsm_perturb(net: NeuralNet, example: DatasetExample, epsilon: float) -> DatasetExample:
    """Fast-gradient-sign perturbation of the input grid; the target is kept."""
    x = grids_to_tensor(example.input)
    t = grids_to_tensor(example.target)
    if x.shape != t.shape:
        raise ShapeMismatch("input and target grids differ in shape")
    delta = fgsm_perturbation(net, x, t, epsilon)
    new_input = (example.input.astype(np.complex128) + tensor_to_grids(delta)).astype(example.input.dtype)
    return with_meta(DatasetExample(new_input, example.target, example.meta), adversarial=True)


def _mean_uncertainty(net, val, mc):
    return float(np.mean(score_uncertainty(net, val, mc)))


def retrain_loop(net: NeuralNet, train_set: Dataset, val_set: Dataset,
                 cfg: RetrainConfig = RetrainConfig(), mc: McConfig = McConfig()):
    """Run the retraining loop.

    Returns
    -------
    (NeuralNet, list of IterationRecord)
        The final network and one record per completed iteration.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise InvalidParameter("training and validation sets must be nonempty")
    if mc.num_passes < 2:
        raise InvalidParameter("uncertainty scoring needs at least 2 MC passes")
    net = net.copy()
    records = []
    scores = score_uncertainty(net, val_set, mc)
    val_before = evaluate_mse(net, val_set)
    for it in range(1, cfg.max_iterations + 1):
        selected = select_uncertain(scores, cfg.uncertain_fraction)
        if cfg.augmentation_mode == "adversarial_only":
            eps = cfg.fgsm_epsilon if cfg.fgsm_epsilon is not None else 0.05 * net.scale
            extra = [fgsm_perturb(net, val_set[i], eps) for i in selected]
        else:
            extra = list(val_set.examples)
        augmented = Dataset(list(train_set.examples) + extra, train_set.spec)
        train_cfg = replace(cfg.train, seed=cfg.train.seed + it)
        net, _ = train(net, augmented, val_set, train_cfg)
        val_after = evaluate_mse(net, val_set)
        new_scores = score_uncertainty(net, val_set, mc)
        records.append(IterationRecord(
            iteration=it,
            selected=tuple(int(i) for i in selected),
            val_mse_before=val_before,
            val_mse_after=val_after,
            mean_uncertainty_before=float(np.mean(scores)),
            mean_uncertainty_after=float(np.mean(new_scores)),
            trainset_size=len(augmented),
        ))
        if val_after < cfg.tolerance:
            break
        scores, val_before = new_scores, val_after
    return net, records
