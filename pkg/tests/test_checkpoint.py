import numpy as np
import pytest

from ictus import autodiff as ad
from ictus.checkpoint import (
    MAGIC,
    CheckpointError,
    ParameterStore,
    load_checkpoint,
    save_checkpoint,
)
from ictus.gradcheck import grad_check


def test_round_trip_is_bit_exact(tmp_path, rng):
    store = ParameterStore()
    store.add("w", rng.normal(size=(3, 4)))
    store.add("deep.nested.bias", rng.normal(size=7))
    store.add("scalarish", rng.normal(size=(1,)))
    path = tmp_path / "model.ckpt"
    save_checkpoint(store, path)
    loaded = load_checkpoint(path)
    assert list(loaded) == store.names()
    for name, arr in loaded.items():
        assert arr.tobytes() == store[name].data.tobytes()
    # writing the loaded dict again reproduces identical bytes
    second = tmp_path / "again.ckpt"
    save_checkpoint({k: v for k, v in loaded.items()}, second)
    assert second.read_bytes() == path.read_bytes()


def test_magic_bytes_lead_the_file(tmp_path):
    store = ParameterStore()
    store.add("x", np.zeros(2))
    path = tmp_path / "m.ckpt"
    save_checkpoint(store, path)
    assert path.read_bytes().startswith(MAGIC)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(CheckpointError, match="offset 0"):
        load_checkpoint(path)


def test_truncated_file_reports_offset(tmp_path):
    store = ParameterStore()
    store.add("weights", np.arange(6.0).reshape(2, 3))
    path = tmp_path / "t.ckpt"
    save_checkpoint(store, path)
    clipped = tmp_path / "clipped.ckpt"
    clipped.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(CheckpointError, match="offset"):
        load_checkpoint(clipped)


def test_duplicate_names_rejected():
    store = ParameterStore()
    store.add("w", np.zeros(1))
    with pytest.raises(ValueError, match="duplicate"):
        store.add("w", np.zeros(1))


def test_load_arrays_validates_names_and_shapes(rng):
    store = ParameterStore()
    store.add("a", rng.normal(size=(2, 2)))
    with pytest.raises(ValueError, match="mismatch"):
        store.load_arrays({"b": np.zeros((2, 2))})
    with pytest.raises(ValueError, match="shape"):
        store.load_arrays({"a": np.zeros(3)})
    store.load_arrays({"a": np.ones((2, 2))})
    np.testing.assert_array_equal(store["a"].data, np.ones((2, 2)))


def test_grad_check_identity_graph_has_zero_error():
    x = ad.leaf(np.array([1.5]), name="x")
    report = grad_check(lambda: ad.vsum(x), {"x": x})
    assert report.max_rel_error == 0.0


def test_grad_check_flags_corrupted_adjoint():
    # deliberately wrong backward rule: claims d(2x)/dx = 3
    x = ad.leaf(np.array([0.7, 1.3]), name="x")

    def corrupted(v):
        out = ad.Var(v.data * 2.0)
        out.requires_grad = True
        out._op = "corrupted"
        out._parents = (v,)
        out._vjp = lambda g: (ad.mul(g, 3.0),)
        return out

    report = grad_check(lambda: ad.vsum(corrupted(x)), {"x": x})
    assert report.max_rel_error > 1e-2
