"""Checkpoint container: exact round trip, self-description, version gate."""

import numpy as np
import pytest

from odecast.checkpoint import FORMAT_VERSION, MAGIC, checkpoint_hash, load_checkpoint, \
    save_checkpoint
from odecast.errors import CheckpointFormatError
from odecast.model import init_params
from odecast.series import NormStats


@pytest.fixture
def params_with_stats(tiny_arch):
    stats = NormStats(mean=np.array([1.0, -2.0]), std=np.array([3.0, 0.5]),
                      time_origin=5.0, time_scale=48.0)
    p = init_params(tiny_arch, ["x", "y"], seed=13, obs_noise=0.25, norm_stats=stats)
    p.meta = {"note": "fixture"}
    return p


def test_round_trip_bit_exact(tmp_path, params_with_stats):
    path = tmp_path / "model.ckpt"
    save_checkpoint(params_with_stats, path)
    loaded = load_checkpoint(path)
    assert loaded.arch == params_with_stats.arch
    assert loaded.feature_names == ["x", "y"]
    for name, w in params_with_stats.weights.items():
        assert np.array_equal(loaded.weights[name], w), name
    assert np.array_equal(loaded.obs_noise, params_with_stats.obs_noise)
    assert np.array_equal(loaded.norm_stats.mean, params_with_stats.norm_stats.mean)
    assert loaded.norm_stats.time_scale == 48.0
    assert loaded.meta["note"] == "fixture"


def test_checkpoint_is_self_describing(tmp_path, params_with_stats):
    """Loading must need nothing beyond the file itself."""
    path = tmp_path / "model.ckpt"
    save_checkpoint(params_with_stats, path)
    loaded = load_checkpoint(path)
    shapes = loaded.arch.weight_shapes()
    assert set(shapes) == set(loaded.weights)


def test_version_mismatch_rejected(tmp_path, params_with_stats):
    path = tmp_path / "model.ckpt"
    save_checkpoint(params_with_stats, path)
    blob = bytearray(path.read_bytes())
    blob[8:12] = np.uint32(FORMAT_VERSION + 1).tobytes()
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(blob))
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(bad)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOTODECAST" + b"\x00" * 64)
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_truncated_data_section_rejected(tmp_path, params_with_stats):
    path = tmp_path / "model.ckpt"
    save_checkpoint(params_with_stats, path)
    blob = path.read_bytes()
    cut = tmp_path / "cut.ckpt"
    cut.write_bytes(blob[:len(blob) - 100])
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(cut)


def test_hash_tracks_content(tmp_path, params_with_stats):
    a = tmp_path / "a.ckpt"
    save_checkpoint(params_with_stats, a)
    h1 = checkpoint_hash(a)
    assert h1 == checkpoint_hash(a)
    changed = params_with_stats.clone()
    changed.weights["dec_b1"] = changed.weights["dec_b1"] + 1.0
    b = tmp_path / "b.ckpt"
    save_checkpoint(changed, b)
    assert checkpoint_hash(b) != h1


def test_magic_prefix(tmp_path, params_with_stats):
    path = tmp_path / "model.ckpt"
    save_checkpoint(params_with_stats, path)
    assert path.read_bytes()[:8] == MAGIC
