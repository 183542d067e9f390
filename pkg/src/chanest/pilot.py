"""Least-squares pilot estimates and their bilinear interpolation to the full grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivisionByZero, InvalidParameter, ShapeMismatch
from .ofdm import OfdmConfig, PilotConfig


@dataclass(frozen=True)
class SparseEstimate:
    """Channel estimates at pilot resource elements.

    ``subcarriers``, ``symbols`` and ``values`` are aligned 1-D arrays.
    """

    subcarriers: np.ndarray
    symbols: np.ndarray
    values: np.ndarray
    pilots: PilotConfig = None

    def __len__(self):
        return self.values.size


def ls_estimate_at_pilots(rx: np.ndarray, pilots: PilotConfig, cfg: OfdmConfig = OfdmConfig()) -> SparseEstimate:
    """LS estimate ``RX / X`` at every pilot RE."""
    rx = np.asarray(rx)
    if rx.shape != cfg.grid_shape:
        raise ShapeMismatch(f"received grid {rx.shape} does not match config {cfg.grid_shape}")
    sc, sym = pilots.positions(cfg)
    x = pilots.values(cfg)
    if np.any(x == 0):
        raise DivisionByZero("pilot values must be nonzero")
    return SparseEstimate(sc, sym, rx[sc, sym] / x, pilots)


def interpolate_grid(sparse: SparseEstimate, cfg: OfdmConfig = OfdmConfig()) -> np.ndarray:
    """Bilinear interpolation of pilot estimates over the resource grid.

    Interpolates linearly across subcarriers inside each pilot symbol, then
    linearly in time between pilot symbols. Outside the pilot lattice the
    nearest edge value is held constant.
    """
    if len(sparse) == 0:
        raise InvalidParameter("empty sparse estimate")
    sc = np.asarray(sparse.subcarriers)
    sym = np.asarray(sparse.symbols)
    vals = np.asarray(sparse.values)
    if (sc.min() < 0 or sc.max() >= cfg.num_subcarriers
            or sym.min() < 0 or sym.max() >= cfg.symbols_per_slot):
        raise InvalidParameter("sparse estimate indices outside the grid")
    pilot_symbols = np.unique(sym)
    if pilot_symbols.size < 2:
        raise InvalidParameter("need pilots on at least two OFDM symbols")

    k = np.arange(cfg.num_subcarriers)
    freq = np.empty((cfg.num_subcarriers, pilot_symbols.size), dtype=complex)
    for j, m in enumerate(pilot_symbols):
        sel = sym == m
        order = np.argsort(sc[sel], kind="stable")
        xs, ys = sc[sel][order], vals[sel][order]
        freq[:, j] = np.interp(k, xs, ys.real) + 1j * np.interp(k, xs, ys.imag)

    # Linear interpolation in time is a fixed linear map of the pilot columns.
    t = np.arange(cfg.symbols_per_slot)
    eye = np.eye(pilot_symbols.size)
    weights = np.stack([np.interp(t, pilot_symbols, e) for e in eye], axis=1)
    return freq @ weights.T


def pilot_baseline(rx: np.ndarray, pilots: PilotConfig, cfg: OfdmConfig = OfdmConfig()) -> np.ndarray:
    return interpolate_grid(ls_estimate_at_pilots(rx, pilots, cfg), cfg)
