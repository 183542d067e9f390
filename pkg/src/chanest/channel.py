"""Tapped-delay-line fading channels.

Tap tables come from the bundled ``data/tdl_profiles.txt`` file (3GPP TR 38.901
TDL-A..E).  Rayleigh taps are generated with a random-phase sum-of-sinusoids
(Jakes-type) model, the LOS tap of TDL-D/E is a deterministic Doppler-shifted
phasor.  Tap delays are quantized to whole samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from typing import TYPE_CHECKING, Iterable, Optional

import numpy as np

from .errors import InvalidParameter, ShapeMismatch, UnknownProfile

if TYPE_CHECKING:
    from .ofdm import OfdmConfig

PROFILE_NAMES = ("TDL-A", "TDL-B", "TDL-C", "TDL-D", "TDL-E")

NUM_SINUSOIDS = 16
# Angle of arrival of the specular component, relative to the direction of motion.
LOS_ARRIVAL_ANGLE = math.pi / 4

_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class TdlProfile:
    """Static tap table of a tapped-delay-line model.

    Attributes
    ----------
    name : str
        Profile name, e.g. ``"TDL-C"``.
    delays : tuple of float
        Normalized tap delays (multiples of the delay spread), ascending.
    powers_db : tuple of float
        Tap powers in dB as listed in the table (not normalized).
    los : tuple of bool
        Marks the specular line-of-sight tap (first tap only).
    rician_k_db : float or None
        K-factor of the first tap for LOS profiles.
    """

    name: str
    delays: tuple
    powers_db: tuple
    los: tuple = ()
    rician_k_db: Optional[float] = None

    def __post_init__(self):
        if not self.delays:
            raise InvalidParameter("a TDL profile needs at least one tap")
        if not self.los:
            object.__setattr__(self, "los", (False,) * len(self.delays))
        if not (len(self.delays) == len(self.powers_db) == len(self.los)):
            raise InvalidParameter("tap fields have inconsistent lengths")
        d = np.asarray(self.delays, dtype=float)
        if d[0] != 0.0 or np.any(np.diff(d) < 0):
            raise InvalidParameter("normalized delays must be ascending and start at 0")
        if any(self.los[1:]):
            raise InvalidParameter("only the first tap may be line-of-sight")

    @property
    def num_taps(self) -> int:
        return len(self.delays)

    @property
    def powers(self) -> np.ndarray:
        """Linear tap powers normalized to unit total power."""
        p = 10.0 ** (np.asarray(self.powers_db, dtype=float) / 10.0)
        return p / p.sum()


def _parse_profiles(text: str) -> dict:
    profiles = {}
    current = None

    def flush():
        if current is not None:
            profiles[current["name"]] = TdlProfile(
                name=current["name"],
                delays=tuple(current["delays"]),
                powers_db=tuple(current["powers"]),
                los=tuple(current["los"]),
                rician_k_db=current["k"],
            )

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "profile":
            flush()
            current = {"name": parts[1], "delays": [], "powers": [], "los": [], "k": None}
        elif current is None:
            raise ValueError(f"line {lineno}: entry outside a profile stanza")
        elif parts[0] == "k_factor_db":
            current["k"] = float(parts[1])
        elif parts[0] == "tap":
            current["delays"].append(float(parts[1]))
            current["powers"].append(float(parts[2]))
            current["los"].append(len(parts) > 3 and parts[3] == "los")
        else:
            raise ValueError(f"line {lineno}: unknown keyword {parts[0]!r}")
    flush()
    return profiles


_PROFILES = _parse_profiles(
    resources.files("chanest").joinpath("data/tdl_profiles.txt").read_text(encoding="utf-8")
)


def make_tdl_profile(name: str) -> TdlProfile:
    """Return the bundled tap table for one of ``TDL-A`` .. ``TDL-E``."""
    if name not in PROFILE_NAMES:
        raise UnknownProfile(f"unknown TDL profile {name!r}; expected one of {PROFILE_NAMES}")
    return _PROFILES[name]


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=complex)
        if s.ndim != 1:
            raise ShapeMismatch("waveform samples must be one-dimensional")
        if not np.all(np.isfinite(s)):
            raise InvalidParameter("waveform contains non-finite samples")
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class ChannelRealization:
    """One time-varying realization of a tapped-delay-line channel.

    ``tap_gains`` holds the unit-average-power fading process of every tap
    (shape ``(num_taps, num_samples)``); ``path_gains`` applies the tap powers.
    """

    tap_gains: np.ndarray
    tap_powers: np.ndarray
    tap_delays_samples: np.ndarray
    sample_rate_hz: float
    delay_spread_ns: float = 0.0
    max_doppler_hz: float = 0.0
    seed: int = 0
    profile: Optional[TdlProfile] = field(default=None, compare=False)

    @property
    def num_samples(self) -> int:
        return self.tap_gains.shape[1]

    @property
    def path_gains(self) -> np.ndarray:
        return np.sqrt(self.tap_powers)[:, None] * self.tap_gains


def static_channel(gains: Iterable[complex], delays_samples: Iterable[int],
                   num_samples: int, sample_rate_hz: float) -> ChannelRealization:
    """Build a time-invariant channel with the given complex tap gains."""
    g = np.asarray(list(gains), dtype=complex)
    d = np.asarray(list(delays_samples), dtype=int)
    if g.shape != d.shape or g.size == 0:
        raise ShapeMismatch("gains and delays must be nonempty and of equal length")
    if np.any(d < 0):
        raise InvalidParameter("tap delays must be non-negative")
    mag = np.abs(g)
    unit = np.where(mag > 0, g / np.where(mag > 0, mag, 1.0), 1.0)
    return ChannelRealization(
        tap_gains=np.repeat(unit[:, None], num_samples, axis=1),
        tap_powers=mag**2,
        tap_delays_samples=d,
        sample_rate_hz=float(sample_rate_hz),
    )


def _tap_rng(seed: int, tap: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & _SEED_MASK, tap])


def _sos_fading(rng: np.random.Generator, doppler_hz: float, t: np.ndarray) -> np.ndarray:
    # Random-phase sum of sinusoids; arrival angles evenly spaced with a random rotation.
    m = np.arange(1, NUM_SINUSOIDS + 1)
    rotation = rng.uniform(-math.pi, math.pi)
    phases = rng.uniform(-math.pi, math.pi, NUM_SINUSOIDS)
    alpha = (2 * math.pi * m - math.pi + rotation) / NUM_SINUSOIDS
    freqs = doppler_hz * np.cos(alpha)
    arg = 2 * math.pi * np.outer(freqs, t) + phases[:, None]
    return np.exp(1j * arg).sum(axis=0) / math.sqrt(NUM_SINUSOIDS)


def realize_channel(profile: TdlProfile, delay_spread_ns: float, max_doppler_hz: float,
                    num_samples: int, sample_rate_hz: float, seed: int) -> ChannelRealization:
    """Draw a fading realization of ``profile``.

    Parameters
    ----------
    profile : TdlProfile
        Tap table.
    delay_spread_ns : float
        Delay spread scaling the normalized tap delays.
    max_doppler_hz : float
        Maximum Doppler shift. ``0`` disables fading: every tap becomes a
        constant unit-modulus phasor with a seeded random phase.
    num_samples : int
        Length of the fading series (samples).
    sample_rate_hz : float
        Sample rate used to quantize delays and time axis.
    seed : int
        Master seed; tap ``l`` uses a generator seeded with ``(seed, l)``.

    Returns
    -------
    ChannelRealization
    """
    if not delay_spread_ns > 0:
        raise InvalidParameter(f"delay spread must be positive, got {delay_spread_ns}")
    if not max_doppler_hz >= 0:
        raise InvalidParameter(f"maximum Doppler shift must be >= 0, got {max_doppler_hz}")
    if num_samples <= 0:
        raise InvalidParameter(f"num_samples must be positive, got {num_samples}")
    if not sample_rate_hz > 0:
        raise InvalidParameter(f"sample rate must be positive, got {sample_rate_hz}")

    delays = np.asarray(profile.delays) * delay_spread_ns * 1e-9 * sample_rate_hz
    delays = np.rint(delays).astype(int)
    t = np.arange(num_samples) / sample_rate_hz
    gains = np.empty((profile.num_taps, num_samples), dtype=complex)
    for tap in range(profile.num_taps):
        rng = _tap_rng(seed, tap)
        if max_doppler_hz == 0:
            gains[tap] = np.exp(1j * rng.uniform(-math.pi, math.pi))
        elif profile.los[tap]:
            phase0 = rng.uniform(-math.pi, math.pi)
            f_los = max_doppler_hz * math.cos(LOS_ARRIVAL_ANGLE)
            gains[tap] = np.exp(1j * (2 * math.pi * f_los * t + phase0))
        else:
            gains[tap] = _sos_fading(rng, max_doppler_hz, t)
    return ChannelRealization(
        tap_gains=gains,
        tap_powers=profile.powers,
        tap_delays_samples=delays,
        sample_rate_hz=float(sample_rate_hz),
        delay_spread_ns=float(delay_spread_ns),
        max_doppler_hz=float(max_doppler_hz),
        seed=int(seed),
        profile=profile,
    )


def apply_channel(x: Waveform, ch: ChannelRealization) -> Waveform:
    """Pass ``x`` through the channel: ``y[n] = sum_l h_l[n] x[n - d_l]``."""
    if x.sample_rate_hz != ch.sample_rate_hz:
        raise ShapeMismatch(
            f"sample rate mismatch: waveform {x.sample_rate_hz}, channel {ch.sample_rate_hz}")
    n = len(x)
    if n != ch.num_samples:
        raise ShapeMismatch(f"waveform has {n} samples, channel covers {ch.num_samples}")
    y = np.zeros(n, dtype=complex)
    for g, d in zip(ch.path_gains, ch.tap_delays_samples):
        if d >= n:
            continue
        y[d:] += g[d:] * x.samples[: n - d]
    return Waveform(y, x.sample_rate_hz)


def add_awgn(x: Waveform, snr_db: float, seed: int) -> Waveform:
    """Add circular complex Gaussian noise at ``snr_db`` relative to the mean power of ``x``.

    ``snr_db = inf`` returns the input unchanged.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return Waveform(x.samples.copy(), x.sample_rate_hz)
    power = float(np.mean(np.abs(x.samples) ** 2))
    if power == 0:
        raise InvalidParameter("cannot set an SNR on a zero-power signal")
    noise_power = power / 10 ** (snr_db / 10)
    rng = np.random.default_rng(int(seed) & _SEED_MASK)
    noise = rng.standard_normal((2, len(x)))
    noise = math.sqrt(noise_power / 2) * (noise[0] + 1j * noise[1])
    return Waveform(x.samples + noise, x.sample_rate_hz)


def perfect_channel_grid(ch: ChannelRealization, cfg: "OfdmConfig") -> np.ndarray:
    """Exact per-resource-element channel response for one slot.

    Each tap gain is averaged over the FFT window of every OFDM symbol (cyclic
    prefix excluded) and combined with the delay phase ramp of each subcarrier.
    Returns a complex array of shape ``(num_subcarriers, symbols_per_slot)``.
    """
    if ch.num_samples < cfg.slot_length:
        raise ShapeMismatch(
            f"realization covers {ch.num_samples} samples, a slot needs {cfg.slot_length}")
    gains = ch.path_gains
    starts = cfg.fft_window_starts()
    mean_gains = np.stack(
        [gains[:, s:s + cfg.nfft].mean(axis=1) for s in starts], axis=1)
    k = cfg.subcarrier_frequency_indices()
    ramp = np.exp(-2j * math.pi * np.outer(k, ch.tap_delays_samples) / cfg.nfft)
    return ramp @ mean_gains
