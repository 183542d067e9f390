"""Small convolutional regression network with dropout, written against numpy.

Tensors use NHWC layout: ``(batch, subcarriers, symbols, channels)`` where the
two input/output channels carry the real and imaginary parts of a grid.
Convolutions use "same" padding.  The network maps physical channel values to
physical channel values: inputs are divided by ``input_scale`` before the
layer stack and outputs multiplied by it afterwards.  With ``residual=True``
the layer stack predicts a correction that is added to its (scaled) input.
"""

from __future__ import annotations

import copy
import json
import math
import numbers
import struct
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import FormatError, InvalidParameter, ShapeMismatch

# Small enough to train on the default 256-example set in about 7 minutes on one core.
DEFAULT_ARCHITECTURE = "conv5x5:8,relu,dropout:0.1,conv5x5:8,relu,dropout:0.1,conv5x5:2"
# The larger stack from the MATLAB 5G channel-estimation example; roughly 40x
# the cost of the default, impractical on a single CPU core.
REFERENCE_ARCHITECTURE = ("conv9x9:64,relu,dropout:0.1,conv5x5:64,relu,dropout:0.1,"
                          "conv5x5:32,relu,dropout:0.1,conv5x5:2")

CHECKPOINT_MAGIC = b"NNCK"
CHECKPOINT_VERSION = 1

# Cap on im2col buffer size (elements) per convolution chunk.
_IM2COL_BUDGET = 1 << 24


class Conv2D:
    def __init__(self, in_channels: int, out_channels: int, kernel: tuple, dtype=np.float32):
        kh, kw = kernel
        if kh < 1 or kw < 1 or in_channels < 1 or out_channels < 1:
            raise InvalidParameter("convolution sizes must be positive")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = (kh, kw)
        self.weight = np.zeros((kh, kw, in_channels, out_channels), dtype=dtype)
        self.bias = np.zeros(out_channels, dtype=dtype)

    @property
    def params(self):
        return [self.weight, self.bias]

    def spec(self) -> dict:
        return {"type": "conv2d", "kernel": list(self.kernel),
                "in_channels": self.in_channels, "out_channels": self.out_channels}

    def forward(self, x, cache: Optional[dict] = None):
        """Same-padded correlation; stores the im2col matrix in ``cache`` if given."""
        kh, kw = self.kernel
        top, left = (kh - 1) // 2, (kw - 1) // 2
        pads = ((top, kh - 1 - top), (left, kw - 1 - left))
        wm = self.weight.reshape(-1, self.out_channels)
        if cache is not None:
            cols = _im2col(x, self.kernel, pads)
            cache["cols"] = cols
            return (cols @ wm + self.bias).reshape(x.shape[:3] + (self.out_channels,))
        return _correlate(x, wm, self.kernel, pads) + self.bias

    def backward(self, cache: dict, dout, need_input_grad: bool = True):
        """Return ``(dx, [dweight, dbias])`` using the forward cache."""
        kh, kw = self.kernel
        d2 = dout.reshape(-1, self.out_channels)
        dw = (cache["cols"].T @ d2).reshape(self.weight.shape)
        db = d2.sum(axis=0)
        dx = None
        if need_input_grad:
            # Gradient of a correlation: correlate dout with the flipped, transposed kernel.
            top, left = (kh - 1) // 2, (kw - 1) // 2
            pads = ((kh - 1 - top, top), (kw - 1 - left, left))
            wf = self.weight[::-1, ::-1].transpose(0, 1, 3, 2).reshape(-1, self.in_channels)
            dx = _correlate(dout, wf, self.kernel, pads)
        return dx, [dw, db]


def _im2col(x, kernel, pads):
    kh, kw = kernel
    xp = np.pad(x, ((0, 0),) + pads + ((0, 0),))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (b, h, w, c, kh, kw)
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(-1, kh * kw * x.shape[3])


def _correlate(x, wm, kernel, pads):
    """Chunked im2col correlation of NHWC ``x`` with a ``(kh*kw*cin, cout)`` matrix."""
    b, h, w, c = x.shape
    kh, kw = kernel
    out = np.empty((b, h, w, wm.shape[1]), dtype=np.result_type(x, wm))
    step = max(1, _IM2COL_BUDGET // (h * w * kh * kw * c))
    for s in range(0, b, step):
        out[s:s + step] = (_im2col(x[s:s + step], kernel, pads) @ wm).reshape(-1, h, w, wm.shape[1])
    return out


class ReLU:
    params: list = []

    def spec(self) -> dict:
        return {"type": "relu"}

    def forward(self, x):
        return np.maximum(x, 0)

    def backward(self, x, dout):
        return dout * (x > 0)


class Dropout:
    params: list = []

    def __init__(self, rate: float):
        if not 0 <= rate < 1:
            raise InvalidParameter(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = float(rate)

    def spec(self) -> dict:
        return {"type": "dropout", "rate": self.rate}

    def mask(self, shape, rngs):
        """Inverted-dropout mask; ``rngs`` is one generator or one per batch element."""
        if isinstance(rngs, np.random.Generator):
            keep = rngs.random(shape, dtype=np.float32) >= self.rate
        else:
            keep = np.stack([r.random(shape[1:], dtype=np.float32) >= self.rate for r in rngs])
        return keep / (1.0 - self.rate)


def parse_architecture(text: str, in_channels: int = 2) -> list:
    """Parse ``"conv5x5:16,relu,dropout:0.1,conv5x5:2"`` into layer specs."""
    specs = []
    channels = in_channels
    for token in (t.strip() for t in text.split(",")):
        if token.startswith("conv"):
            try:
                size, out = token[4:].split(":")
                kh, kw = (int(v) for v in size.split("x"))
                out = int(out)
            except ValueError as exc:
                raise InvalidParameter(f"bad convolution token {token!r}") from exc
            specs.append({"type": "conv2d", "kernel": [kh, kw],
                          "in_channels": channels, "out_channels": out})
            channels = out
        elif token == "relu":
            specs.append({"type": "relu"})
        elif token.startswith("dropout:"):
            specs.append({"type": "dropout", "rate": float(token.split(":", 1)[1])})
        else:
            raise InvalidParameter(f"unknown layer token {token!r}")
    return specs


class NeuralNet:
    """Layer stack mapping ``(..., H, W, in_channels)`` to ``(..., H, W, out_channels)``."""

    def __init__(self, layer_specs: Sequence[dict], residual: bool = False,
                 input_scale: Optional[float] = None, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.layers = []
        channels = None
        for spec in layer_specs:
            kind = spec["type"]
            if kind == "conv2d":
                if channels is not None and spec["in_channels"] != channels:
                    raise ShapeMismatch(
                        f"conv expects {spec['in_channels']} channels, previous layer gives {channels}")
                layer = Conv2D(spec["in_channels"], spec["out_channels"], tuple(spec["kernel"]), self.dtype)
                channels = spec["out_channels"]
            elif kind == "relu":
                layer = ReLU()
            elif kind == "dropout":
                layer = Dropout(spec["rate"])
            else:
                raise InvalidParameter(f"unknown layer type {kind!r}")
            self.layers.append(layer)
        convs = [l for l in self.layers if isinstance(l, Conv2D)]
        if not convs:
            raise InvalidParameter("network needs at least one convolution")
        self.in_channels = convs[0].in_channels
        self.out_channels = convs[-1].out_channels
        if residual and self.in_channels != self.out_channels:
            raise ShapeMismatch("residual network needs equal input and output channels")
        self.residual = residual
        self.input_scale = input_scale

    @classmethod
    def from_architecture(cls, text: str = DEFAULT_ARCHITECTURE, residual: bool = True,
                          in_channels: int = 2, seed: int = 0, dtype=np.float32) -> "NeuralNet":
        net = cls(parse_architecture(text, in_channels), residual=residual, dtype=dtype)
        net.initialize(seed)
        return net

    def initialize(self, seed: int) -> None:
        """He-normal weights, zero biases; the last conv is shrunk for residual nets."""
        rng = np.random.default_rng(seed)
        convs = [l for l in self.layers if isinstance(l, Conv2D)]
        for i, conv in enumerate(convs):
            kh, kw = conv.kernel
            std = math.sqrt(2.0 / (kh * kw * conv.in_channels))
            if self.residual and i == len(convs) - 1:
                std *= 0.1
            conv.weight[...] = rng.normal(0.0, std, conv.weight.shape)
            conv.bias[...] = 0

    @property
    def params(self) -> list:
        return [p for layer in self.layers for p in layer.params]

    def architecture(self) -> list:
        return [layer.spec() for layer in self.layers]

    @property
    def scale(self) -> float:
        return 1.0 if self.input_scale is None else float(self.input_scale)

    def copy(self) -> "NeuralNet":
        return copy.deepcopy(self)

    def _prepare(self, x):
        x = np.asarray(x)
        single = x.ndim == 3
        if single:
            x = x[None]
        if x.ndim != 4 or x.shape[-1] != self.in_channels:
            raise ShapeMismatch(f"expected (..., H, W, {self.in_channels}) input, got {x.shape}")
        return x.astype(self.dtype, copy=False), single

    @staticmethod
    def _rngs(seed, batch):
        if isinstance(seed, (list, tuple)) and len(seed) and not isinstance(seed[0], numbers.Integral):
            if len(seed) != batch:
                raise ShapeMismatch("need one dropout seed per batch element")
            return [np.random.default_rng(s) for s in seed]
        if isinstance(seed, np.random.Generator):
            return seed
        return np.random.default_rng(seed)

    def _draw_masks(self, x_shape, dropout_active, seed) -> dict:
        """Dropout masks for a whole batch, keyed by layer index."""
        if not dropout_active:
            return {}
        rngs = self._rngs(seed, x_shape[0])
        masks = {}
        channels = self.in_channels
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv2D):
                channels = layer.out_channels
            elif isinstance(layer, Dropout) and layer.rate > 0:
                masks[i] = layer.mask(x_shape[:3] + (channels,), rngs).astype(self.dtype)
        return masks

    def _run(self, x, masks, caches=None):
        scale = self.dtype.type(self.scale)
        z = x / scale
        h = z
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dropout):
                if i in masks:
                    h = h * masks[i]
            elif isinstance(layer, Conv2D):
                cache = None
                if caches is not None:
                    cache = caches[i] = {}
                h = layer.forward(h, cache)
            else:
                if caches is not None:
                    caches[i] = h
                h = layer.forward(h)
        if self.residual:
            h = h + z
        return h * scale

    def forward(self, x, dropout_active: bool = False, seed=None) -> np.ndarray:
        """Evaluate the network.

        Parameters
        ----------
        x : array
            ``(H, W, C)`` or ``(B, H, W, C)`` input.
        dropout_active : bool
            Apply dropout (inverted scaling) instead of the identity.
        seed : int, sequence, Generator or list of seeds
            Source of dropout masks. A list of per-example seeds (tuples or
            SeedSequences) draws each batch element's masks independently.
        """
        x, single = self._prepare(x)
        y = self._run(x, self._draw_masks(x.shape, dropout_active, seed))
        return y[0] if single else y

    def backward(self, x, target, dropout_active: bool = False, seed=None,
                 need_input_grad: bool = True, micro_batch: int = 16):
        """Mean-squared-error loss and its gradients.

        Returns
        -------
        loss : float
            Mean over all output elements of ``(forward(x) - target)**2``.
        grads : list of ndarray
            Gradients aligned with :attr:`params`.
        dx : ndarray or None
            Gradient of the loss with respect to ``x`` (None unless
            ``need_input_grad``).
        """
        x, single = self._prepare(x)
        t = np.asarray(target, dtype=self.dtype)
        if single:
            t = t[None]
        if t.shape[:3] != x.shape[:3] or t.shape[3] != self.out_channels:
            raise ShapeMismatch(f"target shape {t.shape} does not match output for input {x.shape}")
        masks = self._draw_masks(x.shape, dropout_active, seed)
        scale = self.dtype.type(self.scale)
        grads = [np.zeros_like(p) for p in self.params]
        dx = np.empty_like(x) if need_input_grad else None
        first_conv = next(i for i, l in enumerate(self.layers) if isinstance(l, Conv2D))
        sq = 0.0
        for s in range(0, x.shape[0], micro_batch):
            sl = slice(s, s + micro_batch)
            caches = {}
            y = self._run(x[sl], {i: m[sl] for i, m in masks.items()}, caches)
            diff = y - t[sl]
            sq += float(np.sum(diff.astype(np.float64) ** 2))
            d = (2.0 / t.size) * diff * scale
            d_skip = d if self.residual else None
            g_mb = []
            for i in range(len(self.layers) - 1, -1, -1):
                layer = self.layers[i]
                if isinstance(layer, Dropout):
                    if i in masks:
                        d = d * masks[i][sl]
                elif isinstance(layer, Conv2D):
                    want = need_input_grad or i > first_conv
                    d, g = layer.backward(caches[i], d, need_input_grad=want)
                    g_mb[:0] = g
                else:
                    d = layer.backward(caches[i], d)
                if d is None:
                    break
            for acc, g in zip(grads, g_mb):
                acc += g
            if need_input_grad:
                if d_skip is not None:
                    d = d + d_skip
                dx[sl] = d / scale
        loss = sq / t.size
        if need_input_grad and single:
            dx = dx[0]
        return loss, grads, dx


def grids_to_tensor(grids) -> np.ndarray:
    """Stack complex grids ``(B, H, W)`` or ``(H, W)`` into real ``(..., H, W, 2)`` tensors."""
    g = np.asarray(grids)
    return np.stack([g.real, g.imag], axis=-1).astype(np.float32)


def tensor_to_grids(t) -> np.ndarray:
    t = np.asarray(t)
    return t[..., 0].astype(np.float64) + 1j * t[..., 1].astype(np.float64)


def as_tensors(data):
    """Accept ``(inputs, targets)`` tensors or anything with ``.examples``."""
    if isinstance(data, tuple):
        x, y = data
        return np.asarray(x), np.asarray(y)
    examples = data.examples if hasattr(data, "examples") else list(data)
    if not examples:
        raise InvalidParameter("empty dataset")
    x = grids_to_tensor(np.stack([e.input for e in examples]))
    y = grids_to_tensor(np.stack([e.target for e in examples]))
    return x, y


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 100
    early_stop_patience: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidParameter("learning_rate must be positive")
        if self.batch_size < 1:
            raise InvalidParameter("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise InvalidParameter("max_epochs must be >= 1")
        if self.early_stop_patience < 0:
            raise InvalidParameter("early_stop_patience must be >= 0")


@dataclass
class TrainReport:
    """Per-epoch losses, as complex-grid MSE (mean ``|error|**2`` per RE)."""

    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    initial_val_loss: float = float("nan")
    best_epoch: int = 0
    stopped_epoch: int = 0
    wall_time_s: float = 0.0

    @property
    def best_val_loss(self) -> float:
        return min([self.initial_val_loss] + self.val_loss)


def _batched_mse(net: NeuralNet, x, y, batch: int = 16) -> float:
    total = 0.0
    for s in range(0, len(x), batch):
        d = net.forward(x[s:s + batch]).astype(np.float64) - y[s:s + batch]
        total += float(np.sum(d ** 2))
    return 2.0 * total / y.size


def evaluate_mse(net: NeuralNet, data) -> float:
    """Dropout-off complex MSE of ``net`` on a dataset or ``(inputs, targets)`` pair."""
    x, y = as_tensors(data)
    return _batched_mse(net, x, y)


def train(net: NeuralNet, train_set, val_set, cfg: TrainConfig = TrainConfig()):
    """Minibatch Adam on the MSE loss with early stopping.

    The starting weights count as epoch 0; the returned network carries the
    weights with the lowest validation MSE seen (possibly the starting ones).
    If ``net.input_scale`` is unset it is fixed to the standard deviation of
    the training inputs. ``net`` itself is left untouched.

    Returns
    -------
    (NeuralNet, TrainReport)
    """
    x_tr, y_tr = as_tensors(train_set)
    x_va, y_va = as_tensors(val_set)
    if len(x_tr) == 0 or len(x_va) == 0:
        raise InvalidParameter("training and validation sets must be nonempty")
    start = time.perf_counter()
    net = net.copy()
    if net.input_scale is None:
        net.input_scale = float(np.std(x_tr.astype(np.float64)))
    rng = np.random.default_rng(cfg.seed)
    params = net.params
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    step = 0

    report = TrainReport(initial_val_loss=_batched_mse(net, x_va, y_va))
    best = report.initial_val_loss
    best_params = [p.copy() for p in params]
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(x_tr))
        epoch_loss = 0.0
        for s in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[s:s + cfg.batch_size])
            loss, grads, _ = net.backward(x_tr[idx], y_tr[idx], dropout_active=True, seed=rng,
                                          need_input_grad=False)
            epoch_loss += loss * len(idx)
            step += 1
            lr_t = cfg.learning_rate * math.sqrt(1 - cfg.beta2 ** step) / (1 - cfg.beta1 ** step)
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= cfg.beta1
                mi += (1 - cfg.beta1) * g
                vi *= cfg.beta2
                vi += (1 - cfg.beta2) * g * g
                p -= (lr_t * mi / (np.sqrt(vi) + cfg.eps)).astype(p.dtype)
        report.train_loss.append(2.0 * epoch_loss / len(x_tr))
        val = _batched_mse(net, x_va, y_va)
        report.val_loss.append(val)
        report.stopped_epoch = epoch
        if val < best:
            best, stale = val, 0
            report.best_epoch = epoch
            best_params = [p.copy() for p in params]
        else:
            stale += 1
            if stale > cfg.early_stop_patience:
                break
    for p, b in zip(params, best_params):
        p[...] = b
    report.wall_time_s = time.perf_counter() - start
    return net, report


def save_checkpoint(net: NeuralNet, path, train_config: Optional[TrainConfig] = None,
                    seed: Optional[int] = None) -> None:
    """Write ``NNCK`` magic, u32 header length, JSON header, float32 weights."""
    tensors = []
    for li, layer in enumerate(net.layers):
        for name, p in zip(("weight", "bias"), layer.params):
            tensors.append({"name": f"{li}.{name}", "shape": list(p.shape)})
    header = {
        "version": CHECKPOINT_VERSION,
        "architecture": net.architecture(),
        "residual": net.residual,
        "input_scale": net.input_scale,
        "tensors": tensors,
        "train_config": asdict(train_config) if train_config is not None else None,
        "seed": seed,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for p in net.params:
            f.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def load_checkpoint(path, dtype=np.float32):
    """Read a checkpoint; returns ``(net, header)``."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CHECKPOINT_MAGIC or len(data) < 8:
        raise FormatError(f"{path}: not a network checkpoint")
    (hlen,) = struct.unpack("<I", data[4:8])
    try:
        header = json.loads(data[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint header") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {header.get('version')}")
    net = NeuralNet(header["architecture"], residual=header["residual"],
                    input_scale=header["input_scale"], dtype=dtype)
    offset = 8 + hlen
    params = net.params
    if len(params) != len(header["tensors"]):
        raise FormatError(f"{path}: tensor count disagrees with architecture")
    for p, t in zip(params, header["tensors"]):
        if list(p.shape) != t["shape"]:
            raise FormatError(f"{path}: tensor {t['name']} has shape {t['shape']}, expected {list(p.shape)}")
        n = p.size * 4
        chunk = data[offset:offset + n]
        if len(chunk) != n:
            raise FormatError(f"{path}: truncated weights")
        p[...] = np.frombuffer(chunk, dtype="<f4").reshape(p.shape)
        offset += n
    if offset != len(data):
        raise FormatError(f"{path}: trailing bytes after weights")
    return net, header
