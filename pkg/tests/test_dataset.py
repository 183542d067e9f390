import json
import math

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from chanest.channel import PROFILE_NAMES, TdlProfile
from chanest.dataset import (Dataset, DatasetSpec, example_seed, generate_dataset, load_dataset,
                             regenerate_example, save_dataset, split, synthesize_example)
from chanest.errors import FormatError, InvalidParameter, UnknownProfile
from chanest.ofdm import OfdmConfig

SMALL = DatasetSpec(num_examples=6, seed=21)


@pytest.fixture(scope="module")
def small():
    return generate_dataset(SMALL)


def test_small_dataset_shapes_and_ranges(small):
    assert len(small) == 6
    for e in small:
        assert e.input.shape == e.target.shape == (612, 14)
        assert e.input.dtype == np.complex64
        assert e.meta.profile in PROFILE_NAMES
        assert 1 <= e.meta.delay_spread_ns <= 300
        assert 5 <= e.meta.doppler_hz <= 400
        assert 0 <= e.meta.snr_db <= 10


def test_example_seeds(small):
    assert [e.meta.seed for e in small] == [21 ^ i for i in range(6)]
    assert example_seed(SMALL, 3) == 21 ^ 3


def test_regenerated_bit_exact(small):
    for e in small:
        again = regenerate_example(e.meta, SMALL)
        assert_array_equal(again.input, e.input)
        assert_array_equal(again.target, e.target)


def test_threads_do_not_change_output(small):
    threaded = generate_dataset(SMALL, threads=3)
    for a, b in zip(small, threaded):
        assert_array_equal(a.input, b.input)
        assert a.meta == b.meta


def test_noiseless_static_flat_channel_makes_baseline_exact():
    flat = TdlProfile("flat", (0.0,), (0.0,))
    e = synthesize_example(flat, 50.0, 0.0, math.inf, seed=4)
    assert np.max(np.abs(e.input - e.target)) < 1e-6


def test_spec_validation():
    with pytest.raises(UnknownProfile):
        DatasetSpec(profiles=("TDL-Q",))
    with pytest.raises(InvalidParameter):
        DatasetSpec(delay_spread_ns=(0.0, 10.0))
    with pytest.raises(InvalidParameter):
        DatasetSpec(snr_db=(5.0, 1.0))
    with pytest.raises(InvalidParameter):
        DatasetSpec(num_examples=0)


def test_fixed_parameters():
    ds = generate_dataset(DatasetSpec(num_examples=2, profiles=("TDL-B",), delay_spread_ns=(30, 30),
                                      max_doppler_hz=(5, 5), snr_db=(7, 7)))
    assert all(e.meta.profile == "TDL-B" and e.meta.delay_spread_ns == 30 and e.meta.snr_db == 7 for e in ds)


def test_spec_dict_roundtrip():
    spec = DatasetSpec(num_examples=3, ofdm=OfdmConfig(), seed=5)
    assert DatasetSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


class TestSplit:
    def test_sizes(self):
        ds = Dataset(list(range(256)))
        tr, va = split(ds, 0.8, seed=0)
        assert (len(tr), len(va)) == (204, 52)
        assert sorted(list(tr) + list(va)) == list(range(256))

    def test_seeded(self):
        ds = Dataset(list(range(50)))
        assert list(split(ds, 0.8, 3)[0]) == list(split(ds, 0.8, 3)[0])
        assert list(split(ds, 0.8, 3)[0]) != list(split(ds, 0.8, 4)[0])

    def test_rejects(self):
        with pytest.raises(InvalidParameter):
            split(Dataset([1, 2, 3]), 1.0)
        with pytest.raises(InvalidParameter):
            split(Dataset([1, 2]), 0.1)


class TestFormat:
    def test_roundtrip(self, small, tmp_path):
        save_dataset(small, tmp_path / "d")
        back = load_dataset(tmp_path / "d")
        assert back.spec == SMALL
        for a, b in zip(small, back):
            assert_array_equal(a.input, b.input)
            assert_array_equal(a.target, b.target)
            assert a.meta == b.meta
        manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
        assert set(manifest) >= {"version", "spec", "examples"}
        assert set(manifest["examples"][0]) == {"index", "profile", "delay_spread_ns", "doppler_hz", "snr_db",
                                                "seed", "adversarial"}

    def test_byte_identical(self, small, tmp_path):
        save_dataset(small, tmp_path / "a")
        save_dataset(generate_dataset(SMALL), tmp_path / "b")
        for name in ("manifest.json", "examples.bin"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_truncated(self, small, tmp_path):
        save_dataset(small, tmp_path / "d")
        records = tmp_path / "d" / "examples.bin"
        records.write_bytes(records.read_bytes()[:-100])
        with pytest.raises(FormatError):
            load_dataset(tmp_path / "d")

    def test_count_mismatch(self, small, tmp_path):
        save_dataset(small, tmp_path / "d")
        path = tmp_path / "d" / "manifest.json"
        manifest = json.loads(path.read_text())
        manifest["examples"].pop()
        path.write_text(json.dumps(manifest))
        with pytest.raises(FormatError):
            load_dataset(tmp_path / "d")

    def test_corrupt_manifest(self, small, tmp_path):
        save_dataset(small, tmp_path / "d")
        (tmp_path / "d" / "manifest.json").write_text("{not json")
        with pytest.raises(FormatError):
            load_dataset(tmp_path / "d")

    def test_overwrite_replaces(self, small, tmp_path):
        save_dataset(small, tmp_path / "d")
        save_dataset(small.subset([0, 1]), tmp_path / "d")
        assert len(load_dataset(tmp_path / "d")) == 2
        assert [p.name for p in tmp_path.iterdir()] == ["d"]
