"""CP-OFDM resource grids at the 30 kHz / 1024-point numerology.

Grids are plain complex arrays of shape ``(num_subcarriers, symbols_per_slot)``
(rows are subcarriers, columns OFDM symbols).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import BinaryIO, Optional

import numpy as np

from .channel import Waveform
from .errors import FormatError, InvalidLength, InvalidParameter, ShapeMismatch

# 30 kHz subcarrier spacing at 30.72 Msps: the first symbol of every half
# subframe (here: every slot) carries 16 extra CP samples.
DEFAULT_CP_LENGTHS = (88,) + (72,) * 13

GRID_MAGIC = b"CGRD"
_GRID_HEADER = struct.Struct("<4sII")


@dataclass(frozen=True)
class OfdmConfig:
    nfft: int = 1024
    sample_rate_hz: float = 30_720_000.0
    num_subcarriers: int = 612
    symbols_per_slot: int = 14
    cp_lengths_samples: tuple = DEFAULT_CP_LENGTHS
    windowing_samples: int = 36
    slots_per_subframe: int = 2
    slots_per_frame: int = 20

    def __post_init__(self):
        if not 0 < self.num_subcarriers <= self.nfft:
            raise InvalidParameter("num_subcarriers must be in [1, nfft]")
        if len(self.cp_lengths_samples) != self.symbols_per_slot:
            raise InvalidParameter("need one CP length per OFDM symbol")
        if any(c <= 0 for c in self.cp_lengths_samples):
            raise InvalidParameter("CP lengths must be positive")

    @property
    def grid_shape(self) -> tuple:
        return (self.num_subcarriers, self.symbols_per_slot)

    @property
    def slot_length(self) -> int:
        return self.symbols_per_slot * self.nfft + sum(self.cp_lengths_samples)

    def symbol_starts(self) -> np.ndarray:
        """Sample index where each symbol (including its CP) begins."""
        lengths = np.asarray(self.cp_lengths_samples) + self.nfft
        return np.concatenate(([0], np.cumsum(lengths)[:-1]))

    def fft_window_starts(self) -> np.ndarray:
        return self.symbol_starts() + np.asarray(self.cp_lengths_samples)

    def subcarrier_frequency_indices(self) -> np.ndarray:
        """Signed frequency index of each subcarrier, centred on DC."""
        return np.arange(self.num_subcarriers) - self.num_subcarriers // 2

    def fft_bins(self) -> np.ndarray:
        return self.subcarrier_frequency_indices() % self.nfft


@dataclass(frozen=True)
class PilotConfig:
    """Comb-type pilot layout with seeded QPSK pilot values."""

    pilot_symbol_indices: tuple = (2, 11)
    subcarrier_stride: int = 2
    subcarrier_offset: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.subcarrier_stride < 1:
            raise InvalidParameter("subcarrier_stride must be >= 1")
        if not self.pilot_symbol_indices:
            raise InvalidParameter("at least one pilot symbol is required")

    def mask(self, cfg: OfdmConfig) -> np.ndarray:
        if max(self.pilot_symbol_indices) >= cfg.symbols_per_slot or min(self.pilot_symbol_indices) < 0:
            raise InvalidParameter("pilot symbol index outside the slot")
        if self.subcarrier_offset >= cfg.num_subcarriers:
            raise InvalidParameter("pilot subcarrier offset outside the grid")
        m = np.zeros(cfg.grid_shape, dtype=bool)
        rows = np.arange(self.subcarrier_offset, cfg.num_subcarriers, self.subcarrier_stride)
        m[np.ix_(rows, sorted(set(self.pilot_symbol_indices)))] = True
        return m

    def positions(self, cfg: OfdmConfig) -> tuple:
        """``(subcarrier, symbol)`` index arrays of the pilot REs, symbol-major order."""
        sym, sc = np.nonzero(self.mask(cfg).T)
        return sc, sym

    def values(self, cfg: OfdmConfig) -> np.ndarray:
        n = int(self.mask(cfg).sum())
        rng = np.random.default_rng(self.seed)
        bits = rng.integers(0, 2, size=(2, n))
        return ((1 - 2 * bits[0]) + 1j * (1 - 2 * bits[1])) / math.sqrt(2)

    def grid(self, cfg: OfdmConfig) -> np.ndarray:
        """Complex grid holding the pilot values and zeros elsewhere."""
        g = np.zeros(cfg.grid_shape, dtype=complex)
        g[self.positions(cfg)] = self.values(cfg)
        return g


def qam16_modulate(bits) -> np.ndarray:
    """Gray-mapped 16QAM (TS 38.211 5.1.4), unit average power."""
    b = np.asarray(bits, dtype=int).ravel()
    if b.size % 4:
        raise InvalidLength(f"16QAM needs a multiple of 4 bits, got {b.size}")
    if np.any((b != 0) & (b != 1)):
        raise InvalidParameter("bits must be 0 or 1")
    b = b.reshape(-1, 4)
    s = 1 - 2 * b
    re = s[:, 0] * (2 - s[:, 2])
    im = s[:, 1] * (2 - s[:, 3])
    return (re + 1j * im) / math.sqrt(10)


def payload_bit_count(cfg: OfdmConfig, pilots: PilotConfig) -> int:
    return 4 * int((~pilots.mask(cfg)).sum())


def build_resource_grid(payload_bits, cfg: OfdmConfig, pilots: PilotConfig,
                        seed: Optional[int] = None) -> np.ndarray:
    """Fill a slot with pilots and 16QAM payload.

    If ``payload_bits`` is None the payload is drawn uniformly from ``seed``.
    Payload symbols fill the data REs in symbol-major order.
    """
    nbits = payload_bit_count(cfg, pilots)
    if payload_bits is None:
        payload_bits = np.random.default_rng(seed).integers(0, 2, size=nbits)
    payload_bits = np.asarray(payload_bits)
    if payload_bits.size != nbits:
        raise InvalidLength(f"payload must carry exactly {nbits} bits, got {payload_bits.size}")
    mask = pilots.mask(cfg)
    grid = np.empty(cfg.grid_shape, dtype=complex)
    data = qam16_modulate(payload_bits)
    grid.T[~mask.T] = data
    grid[pilots.positions(cfg)] = pilots.values(cfg)
    return grid


def _check_grid(grid: np.ndarray, cfg: OfdmConfig) -> np.ndarray:
    grid = np.asarray(grid)
    if grid.shape != cfg.grid_shape:
        raise ShapeMismatch(f"grid shape {grid.shape} does not match config {cfg.grid_shape}")
    return grid


def ofdm_modulate(grid: np.ndarray, cfg: OfdmConfig) -> Waveform:
    """Unitary inverse DFT per symbol plus cyclic prefix, symbols concatenated."""
    grid = _check_grid(grid, cfg)
    spectrum = np.zeros((cfg.symbols_per_slot, cfg.nfft), dtype=complex)
    spectrum[:, cfg.fft_bins()] = grid.T
    symbols = np.fft.ifft(spectrum, axis=1, norm="ortho")
    parts = []
    for sym, cp in zip(symbols, cfg.cp_lengths_samples):
        parts.append(sym[-cp:])
        parts.append(sym)
    return Waveform(np.concatenate(parts), cfg.sample_rate_hz)


def ofdm_demodulate(y: Waveform, cfg: OfdmConfig) -> np.ndarray:
    """Strip cyclic prefixes, unitary DFT, extract the occupied subcarriers."""
    if len(y) != cfg.slot_length:
        raise ShapeMismatch(f"expected {cfg.slot_length} samples for one slot, got {len(y)}")
    idx = cfg.fft_window_starts()[:, None] + np.arange(cfg.nfft)
    spectrum = np.fft.fft(y.samples[idx], axis=1, norm="ortho")
    return spectrum[:, cfg.fft_bins()].T


def write_grid(f: BinaryIO, grid: np.ndarray) -> None:
    """Write one CGRD record: magic, u32 rows, u32 cols, row-major complex64 payload."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ShapeMismatch("grid must be two-dimensional")
    rows, cols = grid.shape
    f.write(_GRID_HEADER.pack(GRID_MAGIC, rows, cols))
    f.write(np.ascontiguousarray(grid, dtype="<c8").tobytes())


def read_grid(f: BinaryIO) -> np.ndarray:
    header = f.read(_GRID_HEADER.size)
    if len(header) != _GRID_HEADER.size:
        raise FormatError("truncated grid header")
    magic, rows, cols = _GRID_HEADER.unpack(header)
    if magic != GRID_MAGIC:
        raise FormatError(f"bad grid magic {magic!r}")
    nbytes = rows * cols * 8
    payload = f.read(nbytes)
    if len(payload) != nbytes:
        raise FormatError("truncated grid payload")
    return np.frombuffer(payload, dtype="<c8").reshape(rows, cols).astype(np.complex64)
