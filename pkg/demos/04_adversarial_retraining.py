"""Uncertainty-driven adversarial retraining on a small dataset.

Each iteration scores the validation slots by MC-dropout entropy, takes the
most uncertain fifth, perturbs their inputs with one FGSM step and warm-starts
training on the enlarged set. The table lists validation MSE and mean
uncertainty before and after every iteration.

Run with ``python3 demos/04_adversarial_retraining.py``.
"""

from chanest import (DatasetSpec, McConfig, NeuralNet, RetrainConfig, TrainConfig, generate_dataset,
                     retrain_loop, split, train)

data = generate_dataset(DatasetSpec(num_examples=40, seed=9))
train_set, val_set = split(data, 0.8, seed=9)
net = NeuralNet.from_architecture("conv5x5:4,relu,dropout:0.1,conv5x5:2", seed=0)
net, _ = train(net, train_set, val_set, TrainConfig(max_epochs=5, batch_size=16))

cfg = RetrainConfig(max_iterations=3, train=TrainConfig(max_epochs=3, batch_size=16))
net, records = retrain_loop(net, train_set, val_set, cfg, McConfig(num_passes=8, seed=1))

print(f"{'iter':>4s} {'val before':>11s} {'val after':>10s} {'unc before':>11s} {'unc after':>10s} "
      f"{'added':>6s} {'|D|':>4s}")
for r in records:
    print(f"{r.iteration:4d} {r.val_mse_before:11.4g} {r.val_mse_after:10.4g} {r.mean_uncertainty_before:11.4f} "
          f"{r.mean_uncertainty_after:10.4f} {r.num_selected:6d} {r.trainset_size:4d}")
