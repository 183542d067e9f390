"""Train the residual CNN on a small dataset and compare it with the pilot baseline.

This is the ``generate`` / ``train`` / ``evaluate`` pipeline in miniature: 64
training slots instead of 256, a narrower network and a short epoch budget, so
it finishes in a minute or two on one core. The full-size run goes through the
``chanest`` command line.

Run with ``python3 demos/02_train_estimator.py``.
"""

import numpy as np

from chanest import DatasetSpec, NeuralNet, TrainConfig, generate_dataset, split, train
from chanest.nn import grids_to_tensor, tensor_to_grids
from chanest.report import mse

spec = DatasetSpec(num_examples=64, seed=5)
data = generate_dataset(spec)
train_set, val_set = split(data, 0.8, seed=5)
test_set = generate_dataset(DatasetSpec(num_examples=16, seed=5 ^ (1 << 32)))
print(f"{len(train_set)} training, {len(val_set)} validation, {len(test_set)} test slots")

net = NeuralNet.from_architecture("conv5x5:4,relu,dropout:0.1,conv5x5:2", seed=0)
net, report = train(net, train_set, val_set, TrainConfig(max_epochs=15, batch_size=16, seed=0))
print(f"stopped after {report.stopped_epoch} epochs; validation MSE "
      f"{report.initial_val_loss:.4g} -> {report.best_val_loss:.4g}")

baseline = np.mean([mse(e.input, e.target) for e in test_set])
predicted = [tensor_to_grids(net.forward(grids_to_tensor(e.input))) for e in test_set]
cnn = np.mean([mse(p, e.target) for p, e in zip(predicted, test_set)])
print(f"test MSE: pilot baseline {baseline:.4g}, CNN {cnn:.4g} ({100 * (1 - cnn / baseline):.1f}% lower)")
