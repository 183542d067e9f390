"""Helpers shared by several test modules."""

import numpy as np

from chanest.dataset import Dataset, DatasetExample, ExampleMeta
from chanest.nn import Conv2D, NeuralNet, ReLU
from chanest.uncertainty import McConfig, mc_predict


def toy_dataset(n, shape=(12, 4), seed=0, noise=0.3):
    """Small synthetic channel grids: smooth targets plus noisy inputs."""
    rng = np.random.default_rng(seed)
    k = np.arange(shape[0])[:, None]
    m = np.arange(shape[1])[None, :]
    examples = []
    for i in range(n):
        a, f, ph = rng.uniform(0.5, 1.5), rng.uniform(0.05, 0.3), rng.uniform(-np.pi, np.pi)
        target = a * np.exp(1j * (2 * np.pi * f * k + 0.1 * m + ph))
        noise_grid = noise * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
        examples.append(DatasetExample((target + noise_grid).astype(np.complex64), target.astype(np.complex64),
                                       ExampleMeta("TDL-A", 100.0, 50.0, 5.0, i)))
    return Dataset(examples)


def relative_error(analytic, numeric):
    """``max|a - n| / max|n|``, the scale-free gradient mismatch."""
    a, n = np.asarray(analytic, float), np.asarray(numeric, float)
    return float(np.max(np.abs(a - n)) / max(np.max(np.abs(n)), 1e-300))


def numeric_grad(f, arr, h=1e-4):
    """Central finite differences of scalar ``f()`` w.r.t. every entry of ``arr`` (perturbed in place)."""
    g = np.zeros_like(arr, dtype=float)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        up = f()
        arr[i] = old - h
        down = f()
        arr[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def conv_instance(rng):
    kh, kw = (int(v) for v in rng.integers(1, 6, size=2))
    cin, cout = (int(v) for v in rng.integers(1, 4, size=2))
    layer = Conv2D(cin, cout, (kh, kw), dtype=np.float64)
    layer.weight[...] = rng.standard_normal(layer.weight.shape)
    layer.bias[...] = rng.standard_normal(cout)
    x = rng.standard_normal((int(rng.integers(1, 3)), int(rng.integers(3, 7)), int(rng.integers(3, 7)), cin))
    return layer, x


def check_conv(rng):
    """Worst relative error over weight, bias and input gradients of one random convolution."""
    layer, x = conv_instance(rng)
    r = rng.standard_normal(x.shape[:3] + (layer.out_channels,))
    cache = {}
    layer.forward(x, cache)
    dx, (dw, db) = layer.backward(cache, r)

    def loss():
        return float(np.sum(layer.forward(x) * r))

    return max(relative_error(dw, numeric_grad(loss, layer.weight)),
               relative_error(db, numeric_grad(loss, layer.bias)),
               relative_error(dx, numeric_grad(loss, x)))


def check_relu(rng):
    x = rng.standard_normal((2, 4, 5, 3))
    x[np.abs(x) < 1e-2] += 0.05  # keep finite differences away from the kink
    r = rng.standard_normal(x.shape)
    layer = ReLU()
    dx = layer.backward(x, r)
    return relative_error(dx, numeric_grad(lambda: float(np.sum(layer.forward(x) * r)), x))


def random_net(rng, with_dropout=True, residual=None):
    """Small float64 network mixing every layer type."""
    c = int(rng.integers(2, 4))
    k1, k2 = (int(v) for v in rng.choice([1, 2, 3], size=2))
    rate = float(rng.uniform(0.1, 0.5)) if with_dropout else 0.0
    text = f"dropout:{rate},conv{k1}x{k2}:{c},relu,dropout:{rate},conv{k2}x{k1}:2"
    if residual is None:
        residual = bool(rng.integers(2))
    net = NeuralNet.from_architecture(text, residual=residual, seed=int(rng.integers(2**31)), dtype=np.float64)
    net.input_scale = float(rng.uniform(0.5, 2.0))
    for p in net.params:
        p[...] = rng.standard_normal(p.shape) * 0.7
    return net


def check_net(rng, with_dropout=True, micro_batch=16):
    """Worst relative error of all parameter and input gradients of a random small net."""
    net = random_net(rng, with_dropout)
    x = rng.standard_normal((3, 5, 4, 2))
    t = rng.standard_normal((3, 5, 4, 2))
    seed = int(rng.integers(2**31))

    def loss():
        return float(np.mean((net.forward(x, dropout_active=True, seed=seed) - t) ** 2))

    _, grads, dx = net.backward(x, t, dropout_active=True, seed=seed, micro_batch=micro_batch)
    errs = [relative_error(g, numeric_grad(loss, p)) for g, p in zip(grads, net.params)]
    errs.append(relative_error(dx, numeric_grad(loss, x)))
    return max(errs)


def variance_of_mean_slope(net, x, passes=(4, 16, 64), repeats=60):
    """Log-log slope of Var[mean of T passes] against T, over independent base seeds."""
    v = []
    for t in passes:
        means = np.stack([mc_predict(net, x, McConfig(num_passes=t, seed=1000 * t + r)).mean
                          for r in range(repeats)])
        v.append(float(np.mean(np.var(means, axis=0, ddof=1))))
    return float(np.polyfit(np.log(passes), np.log(v), 1)[0])
