import numpy as np
import pytest

from raredapt import (
    Checkpoint,
    CheckpointError,
    Network,
    load_checkpoint,
    make_rng,
    save_checkpoint,
)
from raredapt.checkpoint import MAGIC
from raredapt.network import MlpSpec, NetworkSpec


def make_checkpoint():
    spec = NetworkSpec(MlpSpec(4, (5,), 3), MlpSpec(3, (), 4), MlpSpec(3, (3,), 2))
    net = Network.initialize(spec, make_rng(31))
    return Checkpoint(
        params=net.snapshot(),
        network_spec=spec,
        epoch=7,
        config_hash="abc123",
        metrics={"selected_epoch": 7, "splits": {"trans_val": {"rare_acc": 0.5}}},
    )


def test_round_trip_bit_identical_params_and_forward(tmp_path):
    cp = make_checkpoint()
    path = tmp_path / "model.ckpt"
    save_checkpoint(cp, path)
    loaded = load_checkpoint(path)
    assert loaded.epoch == 7
    assert loaded.config_hash == "abc123"
    assert loaded.metrics == cp.metrics
    assert set(loaded.params) == set(cp.params)
    for key in cp.params:
        assert np.array_equal(loaded.params[key], cp.params[key])
    x = make_rng(32).standard_normal((6, 4))
    before = cp.build_network()
    after = loaded.build_network()
    f_b, _ = before.forward_features(x)
    f_a, _ = after.forward_features(x)
    assert np.array_equal(f_b, f_a)


def test_sidecar_metadata_written(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(make_checkpoint(), path)
    sidecar = tmp_path / "model.ckpt.meta.json"
    assert sidecar.is_file()
    assert '"config_hash": "abc123"' in sidecar.read_text()


def test_truncated_file_errors_cleanly(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(make_checkpoint(), path)
    blob = path.read_bytes()
    for cut in (4, 10, len(blob) // 2, len(blob) - 3):
        (tmp_path / "cut.ckpt").write_bytes(blob[:cut])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(tmp_path / "cut.ckpt")


def test_trailing_garbage_rejected(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(make_checkpoint(), path)
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(path)


def test_bad_magic_and_version(tmp_path):
    path = tmp_path / "model.ckpt"
    path.write_bytes(b"NOTACKPTxxxx")
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(path)
    path.write_bytes(MAGIC[:6] + b"99" + b"\x00" * 8)
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_config_hash_mismatch_warns(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(make_checkpoint(), path)
    with pytest.warns(UserWarning, match="does not match"):
        load_checkpoint(path, expect_config_hash="something-else")
