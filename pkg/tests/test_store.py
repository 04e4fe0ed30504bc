import numpy as np
import pytest

from dualtrain.errors import CheckpointError, RegistrationError
from dualtrain.store import ParamStore, decode_records, encode_records
from dualtrain.weight_map import build_map, copy_small_big, extract
from dualtrain.zoo import ArchConfig, build


def random_store(rng):
    s = ParamStore()
    s.register("stem.conv.weight", rng.standard_normal((8, 3, 3, 3)), True)
    s.register("stem.bn.weight", rng.standard_normal(8), True)
    s.register("stem.bn.running_mean", rng.standard_normal(8), False)
    s.register("head.weight", rng.standard_normal((10, 8)), True)
    return s


def test_register_trainable_gets_zero_grad(rng):
    s = ParamStore()
    s.register("stem.conv.weight", rng.standard_normal((8, 3, 3, 3)), True)
    p = s.param("stem.conv.weight")
    assert p.grad.shape == (8, 3, 3, 3) and not p.grad.any()


def test_register_duplicate_is_error(rng):
    s = ParamStore()
    s.register("a", np.zeros(2), True)
    with pytest.raises(RegistrationError):
        s.register("a", np.zeros(2), False)


def test_buffer_lives_apart_from_params():
    s = ParamStore()
    s.register("stage1.bn0.running_mean", np.zeros(8), False)
    assert "stage1.bn0.running_mean" in s.buffers
    assert "stage1.bn0.running_mean" not in s.params
    assert not s.is_trainable("stage1.bn0.running_mean")


def test_snapshot_round_trip_is_bit_identical(rng):
    s = random_store(rng)
    blob = s.snapshot()
    values = {n: a.copy() for n, a, _ in s.items()}
    for _, arr, _ in s.items():
        arr[...] = rng.standard_normal(arr.shape)
    s.restore(blob)
    for n, arr, _ in s.items():
        assert arr.tobytes() == values[n].tobytes()
    assert s.snapshot() == blob


def test_restore_with_missing_name_lists_it(rng):
    s = random_store(rng)
    other = ParamStore()
    for n, a, t in s.items():
        if n != "head.weight":
            other.register(n, a, t)
    with pytest.raises(CheckpointError) as err:
        s.restore(other.snapshot())
    assert [o.split(":")[0] for o in err.value.offenders] == ["head.weight"]
    assert "head.weight" in str(err.value)


def test_restore_with_wrong_shape_lists_it(rng):
    s = random_store(rng)
    other = s.clone()
    other.buffers["stem.bn.running_mean"] = np.zeros(4)
    with pytest.raises(CheckpointError, match="stem.bn.running_mean"):
        s.restore(other.snapshot())


def test_base_checkpoint_loads_into_extracted_region(rng):
    small = ArchConfig("WidthConvNet", 0, 10, (3, 8, 8))
    big = ArchConfig("WidthConvNet", 1, 10, (3, 8, 8))
    base, mot = build(small, 3), build(big, 4)
    wmap = build_map(small, big)
    copy_small_big(base.store, mot.store, wmap)
    region = extract(mot.store, wmap)
    fresh = build(small, 99).store
    fresh.restore(base.store.snapshot())
    for name, arr, _ in fresh.items():
        assert np.array_equal(arr, region.value(name))


def test_save_load_file(tmp_path, rng):
    s = random_store(rng)
    s.save(tmp_path / "x.ckpt")
    t = random_store(np.random.default_rng(0))
    t.load(tmp_path / "x.ckpt")
    assert t.checksum() == s.checksum()


def test_codec_rejects_garbage_and_truncation(rng):
    blob = encode_records([("a", True, rng.standard_normal((2, 3))), ("b", False, np.array(1.5))])
    names = [n for n, _, _ in decode_records(blob)]
    assert names == ["a", "b"]
    with pytest.raises(CheckpointError):
        decode_records(b"NOTACKPT" + blob[8:])
    with pytest.raises(CheckpointError):
        decode_records(blob[:-3])
    with pytest.raises(CheckpointError):
        decode_records(blob + b"\0")


def test_payload_is_little_endian_f64():
    blob = encode_records([("w", True, np.array([1.0]))])
    assert blob.endswith(np.array([1.0], dtype="<f8").tobytes())


def test_iteration_order_is_stable_across_builds():
    cfg = ArchConfig("DepthResNet", 1)
    assert build(cfg, 0).store.names() == build(cfg, 5).store.names()


def test_checksum_tracks_values(rng):
    s = random_store(rng)
    c = s.checksum()
    s.value("head.weight")[0, 0] += 1.0
    assert s.checksum() != c
    assert s.checksum(["stem.bn.weight"]) != s.checksum(["head.weight"])
