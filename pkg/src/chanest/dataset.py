"""Channel-estimation dataset: generation, splitting and on-disk format.

A dataset directory holds ``manifest.json`` (spec and per-example metadata)
and ``examples.bin`` (for every example, the input grid then the target grid,
each as a CGRD record).
"""

from __future__ import annotations

import json
import math
import os
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .channel import (PROFILE_NAMES, TdlProfile, add_awgn, apply_channel, make_tdl_profile,
                      perfect_channel_grid, realize_channel)
from .errors import FormatError, InvalidParameter
from .ofdm import (OfdmConfig, PilotConfig, build_resource_grid, ofdm_demodulate, ofdm_modulate,
                   read_grid, write_grid)
from .pilot import pilot_baseline

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
RECORDS_NAME = "examples.bin"

_SEED_MASK = (1 << 64) - 1


def _range(value, name):
    lo, hi = (float(v) for v in value)
    if math.isnan(lo) or math.isnan(hi) or lo > hi:
        raise InvalidParameter(f"{name} range must satisfy lo <= hi, got {value}")
    return (lo, hi)


@dataclass(frozen=True)
class DatasetSpec:
    num_examples: int = 256
    profiles: tuple = PROFILE_NAMES
    delay_spread_ns: tuple = (1.0, 300.0)
    max_doppler_hz: tuple = (5.0, 400.0)
    snr_db: tuple = (0.0, 10.0)
    ofdm: OfdmConfig = field(default_factory=OfdmConfig)
    pilots: PilotConfig = field(default_factory=PilotConfig)
    seed: int = 0

    def __post_init__(self):
        if self.num_examples < 1:
            raise InvalidParameter("num_examples must be >= 1")
        if not self.profiles:
            raise InvalidParameter("at least one TDL profile is required")
        for name in self.profiles:
            make_tdl_profile(name)
        object.__setattr__(self, "profiles", tuple(self.profiles))
        ds = _range(self.delay_spread_ns, "delay spread")
        if ds[0] <= 0:
            raise InvalidParameter(f"delay spread must be positive, got {self.delay_spread_ns}")
        fd = _range(self.max_doppler_hz, "Doppler")
        if fd[0] < 0:
            raise InvalidParameter(f"Doppler shift must be >= 0, got {self.max_doppler_hz}")
        object.__setattr__(self, "delay_spread_ns", ds)
        object.__setattr__(self, "max_doppler_hz", fd)
        object.__setattr__(self, "snr_db", _range(self.snr_db, "SNR"))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["profiles"] = list(self.profiles)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        d = dict(d)
        ofdm = dict(d.pop("ofdm"))
        ofdm["cp_lengths_samples"] = tuple(ofdm["cp_lengths_samples"])
        pilots = dict(d.pop("pilots"))
        pilots["pilot_symbol_indices"] = tuple(pilots["pilot_symbol_indices"])
        for key in ("profiles", "delay_spread_ns", "max_doppler_hz", "snr_db"):
            d[key] = tuple(d[key])
        return cls(ofdm=OfdmConfig(**ofdm), pilots=PilotConfig(**pilots), **d)


@dataclass(frozen=True)
class ExampleMeta:
    profile: str
    delay_spread_ns: float
    doppler_hz: float
    snr_db: float
    seed: int
    adversarial: bool = False


@dataclass
class DatasetExample:
    input: np.ndarray
    target: np.ndarray
    meta: ExampleMeta


@dataclass
class Dataset:
    examples: list
    spec: Optional[DatasetSpec] = None
    version: int = FORMAT_VERSION

    def __len__(self):
        return len(self.examples)

    def __getitem__(self, i):
        return self.examples[i]

    def __iter__(self):
        return iter(self.examples)

    def subset(self, indices) -> "Dataset":
        return Dataset([self.examples[i] for i in indices], self.spec, self.version)


def synthesize_example(profile: TdlProfile, delay_spread_ns: float, doppler_hz: float,
                       snr_db: float, seed: int, cfg: OfdmConfig = OfdmConfig(),
                       pilots: PilotConfig = PilotConfig()) -> DatasetExample:
    """Simulate one slot and return the pilot-interpolated estimate and the true channel.

    Payload, fading and noise each use their own stream derived from ``seed``.
    """
    payload_seed, channel_seed, noise_seed = (
        int(v) for v in np.random.SeedSequence(int(seed) & _SEED_MASK).generate_state(3, np.uint64))
    tx = build_resource_grid(None, cfg, pilots, seed=payload_seed)
    x = ofdm_modulate(tx, cfg)
    ch = realize_channel(profile, delay_spread_ns, doppler_hz, len(x), cfg.sample_rate_hz, channel_seed)
    y = add_awgn(apply_channel(x, ch), snr_db, noise_seed)
    rx = ofdm_demodulate(y, cfg)
    meta = ExampleMeta(profile.name, float(delay_spread_ns), float(doppler_hz), float(snr_db), int(seed))
    return DatasetExample(
        input=pilot_baseline(rx, pilots, cfg).astype(np.complex64),
        target=perfect_channel_grid(ch, cfg).astype(np.complex64),
        meta=meta,
    )


def _draw(rng, bounds):
    lo, hi = bounds
    return lo if lo == hi else float(rng.uniform(lo, hi))


def example_seed(spec: DatasetSpec, index: int) -> int:
    return (int(spec.seed) ^ index) & _SEED_MASK


def generate_example(spec: DatasetSpec, index: int) -> DatasetExample:
    seed = example_seed(spec, index)
    rng = np.random.default_rng(seed)
    profile = spec.profiles[int(rng.integers(len(spec.profiles)))]
    delay_spread = _draw(rng, spec.delay_spread_ns)
    doppler = _draw(rng, spec.max_doppler_hz)
    snr = _draw(rng, spec.snr_db)
    return synthesize_example(make_tdl_profile(profile), delay_spread, doppler, snr, seed,
                              spec.ofdm, spec.pilots)


def regenerate_example(meta: ExampleMeta, spec: DatasetSpec) -> DatasetExample:
    """Rebuild an example from its stored metadata."""
    return synthesize_example(make_tdl_profile(meta.profile), meta.delay_spread_ns, meta.doppler_hz,
                              meta.snr_db, meta.seed, spec.ofdm, spec.pilots)


def generate_dataset(spec: DatasetSpec = DatasetSpec(), threads: int = 1) -> Dataset:
    """Generate ``spec.num_examples`` examples; example ``i`` is seeded with ``spec.seed ^ i``."""
    indices = range(spec.num_examples)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            examples = list(pool.map(lambda i: generate_example(spec, i), indices))
    else:
        examples = [generate_example(spec, i) for i in indices]
    return Dataset(examples, spec)


def split(ds: Dataset, train_fraction: float = 0.8, seed: int = 0):
    """Seeded shuffle, then the first ``floor(train_fraction * N)`` examples go to training."""
    n = len(ds)
    if not 0 < train_fraction < 1:
        raise InvalidParameter(f"train_fraction must be in (0, 1), got {train_fraction}")
    if n < 2:
        raise InvalidParameter("need at least two examples to split")
    n_train = math.floor(train_fraction * n)
    if n_train == 0 or n_train == n:
        raise InvalidParameter(f"fraction {train_fraction} leaves an empty side for {n} examples")
    order = np.random.default_rng(seed).permutation(n)
    return ds.subset(order[:n_train]), ds.subset(order[n_train:])


def _write_dir(ds: Dataset, path: Path) -> None:
    grid_shape = list(ds.examples[0].input.shape) if ds.examples else []
    manifest = {
        "version": ds.version,
        "spec": ds.spec.to_dict() if ds.spec is not None else None,
        "grid_shape": grid_shape,
        "examples": [dict(index=i, **asdict(e.meta)) for i, e in enumerate(ds.examples)],
    }
    with open(path / MANIFEST_NAME, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")
    with open(path / RECORDS_NAME, "wb") as f:
        for e in ds.examples:
            write_grid(f, e.input)
            write_grid(f, e.target)


def save_dataset(ds: Dataset, path) -> None:
    """Write ``ds`` to directory ``path``, replacing it only once fully written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        _write_dir(ds, tmp)
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def load_dataset(path) -> Dataset:
    path = Path(path)
    try:
        with open(path / MANIFEST_NAME, encoding="utf-8") as f:
            manifest = json.load(f)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: corrupt manifest: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported dataset format")
    try:
        spec = DatasetSpec.from_dict(manifest["spec"]) if manifest.get("spec") else None
        metas = []
        for entry in manifest["examples"]:
            entry = dict(entry)
            entry.pop("index")
            metas.append(ExampleMeta(**entry))
        shape = tuple(manifest["grid_shape"])
    except (KeyError, TypeError, InvalidParameter) as exc:
        raise FormatError(f"{path}: malformed manifest: {exc}") from exc

    examples = []
    with open(path / RECORDS_NAME, "rb") as f:
        for meta in metas:
            grids = []
            for _ in range(2):
                g = read_grid(f)
                if g.shape != shape:
                    raise FormatError(f"{path}: grid shape {g.shape} disagrees with manifest {shape}")
                grids.append(g)
            examples.append(DatasetExample(grids[0], grids[1], meta))
        if f.read(1):
            raise FormatError(f"{path}: more grid records than manifest entries")
    return Dataset(examples, spec, manifest["version"])


def with_meta(example: DatasetExample, **changes) -> DatasetExample:
    return DatasetExample(example.input, example.target, replace(example.meta, **changes))
