import importlib
import json
import struct
import zlib

import numpy as np
import pytest
from PIL import Image

from stegattn import model as M
from stegattn.attention import TABLE_ORDER, AttentionMode
from stegattn.errors import (
    CheckpointCorruptError,
    CheckpointLengthError,
    CheckpointShapeError,
    CheckpointVersionError,
    DataError,
    InsufficientDataError,
    NumericError,
    UsageError,
)
from stegattn.metrics import CSV_HEADER, evaluate_pairs
from stegattn.pipeline import (
    TrainConfig,
    compare,
    fit,
    load_checkpoint,
    load_dataset,
    load_image,
    quantize,
    save_checkpoint,
    save_image,
    split_indices,
    train,
)
from stegattn.pipeline.train import epoch_batches

# the package re-exports functions named like these modules
ckpt = importlib.import_module("stegattn.pipeline.checkpoint")
compare_mod = importlib.import_module("stegattn.pipeline.compare")
train_mod = importlib.import_module("stegattn.pipeline.train")


def small_config(data_dir, **kw):
    base = dict(seed=0, image_size=16, batch_size=2, steps=3, data_dir=str(data_dir))
    base.update(kw)
    return TrainConfig(**base)


# ---------------------------------------------------------------- data

def test_pixel_mapping(tmp_path):
    arr = np.zeros((12, 12, 3), np.uint8)
    arr[0, 0] = 255
    Image.fromarray(arr).save(tmp_path / "a.png")
    x = load_image(tmp_path / "a.png")
    assert x.shape == (3, 12, 12) and x.dtype == np.float32
    assert x[0, 0, 0] == 1.0 and x[0, 1, 1] == 0.0


def test_center_crop_and_resize(tmp_path):
    arr = np.zeros((20, 40, 3), np.uint8)
    arr[:, 10:30] = 200  # the centred 20x20 square
    Image.fromarray(arr).save(tmp_path / "wide.png")
    x = load_image(tmp_path / "wide.png", 20)
    assert x.shape == (3, 20, 20)
    np.testing.assert_allclose(x, 200 / 255, atol=1e-7)
    assert load_image(tmp_path / "wide.png", 16).shape == (3, 16, 16)


def test_non_rgb_is_converted(tmp_path, caplog):
    Image.fromarray(np.full((12, 12), 128, np.uint8), mode="L").save(tmp_path / "g.png")
    x = load_image(tmp_path / "g.png")
    assert x.shape == (3, 12, 12)
    assert "converting" in caplog.text


def test_undecodable_file_is_data_error(tmp_path):
    (tmp_path / "bad.png").write_bytes(b"not an image")
    with pytest.raises(DataError):
        load_image(tmp_path / "bad.png")


def test_dataset_deterministic_and_halved(toy_dir):
    c1, s1 = load_dataset(toy_dir, 16, seed=4)
    c2, s2 = load_dataset(toy_dir, 16, seed=4)
    assert c1.shape == s1.shape == (6, 3, 16, 16)
    assert c1.tobytes() == c2.tobytes() and s1.tobytes() == s2.tobytes()
    c3, _ = load_dataset(toy_dir, 16, seed=5)
    assert c3.tobytes() != c1.tobytes()


def test_dataset_uses_every_image_once(toy_dir):
    covers, secrets = load_dataset(toy_dir, 16, seed=0)
    files = sorted(toy_dir.iterdir())
    originals = {load_image(p, 16).tobytes() for p in files}
    used = [x.tobytes() for x in np.concatenate([covers, secrets])]
    assert len(set(used)) == len(used) == len(files)
    assert set(used) == originals


def test_dataset_skips_bad_files_and_drops_odd(tmp_path, toy_dir, caplog):
    for p in sorted(toy_dir.iterdir())[:5]:
        (tmp_path / p.name).write_bytes(p.read_bytes())
    (tmp_path / "zz_broken.png").write_bytes(b"\x89PNG garbage")
    covers, secrets = load_dataset(tmp_path, 16, seed=0)
    assert len(covers) == len(secrets) == 2
    assert "skipping" in caplog.text


def test_too_few_images(tmp_path, toy_dir):
    first = sorted(toy_dir.iterdir())[0]
    (tmp_path / first.name).write_bytes(first.read_bytes())
    with pytest.raises(InsufficientDataError) as err:
        load_dataset(tmp_path, 16, seed=0)
    assert isinstance(err.value, UsageError) and isinstance(err.value, DataError)


def test_missing_dir_is_data_error(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path / "nope", 16, 0)


def test_quantization_half_step_bound(tmp_path):
    x = np.random.default_rng(0).uniform(0, 1, (3, 13, 11)).astype(np.float32)
    save_image(tmp_path / "q.png", x)
    back = load_image(tmp_path / "q.png")
    assert np.abs(back - x).max() <= 1 / 510 + 1e-6
    assert quantize(x).dtype == np.uint8 and quantize(x).shape == (13, 11, 3)


# ---------------------------------------------------------------- config, batching

def test_config_validation():
    for bad in (dict(image_size=10), dict(image_size=7), dict(batch_size=0), dict(steps=0),
                dict(learning_rate=0.0), dict(reduction_ratio=0)):
        with pytest.raises(UsageError):
            TrainConfig(**bad)
    with pytest.raises(UsageError):
        TrainConfig(mode="sideways")
    assert TrainConfig(mode="channel").mode is AttentionMode.CHANNEL


def test_config_dict_round_trip():
    cfg = TrainConfig(seed=3, mode=AttentionMode.PARALLEL, data_dir="/x", decoder_attention=True)
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_epoch_batches_drop_remainder():
    rng = np.random.default_rng(0)
    batches = epoch_batches(rng, np.arange(7), 3)
    assert [len(b) for b in batches] == [3, 3]
    assert len(set(np.concatenate(batches))) == 6
    assert [len(b) for b in epoch_batches(rng, np.arange(2), 8)] == [2]


def test_split_is_last_fifth():
    train_idx, eval_idx = split_indices(50)
    assert list(eval_idx) == list(range(40, 50))
    assert set(train_idx).isdisjoint(eval_idx) and len(train_idx) == 40
    assert list(split_indices(3)[1]) == [2]


# ---------------------------------------------------------------- training

def test_train_single_step_log(toy_dir):
    params, log = train(small_config(toy_dir, steps=1))
    assert len(log) == 1 and np.isfinite(log[0])


def test_train_bitwise_deterministic(toy_dir):
    cfg = small_config(toy_dir, steps=4, mode="channel-then-spatial")
    p1, log1 = train(cfg)
    p2, log2 = train(cfg)
    assert log1 == log2
    assert all(a.tobytes() == b.tobytes() for a, b in zip(p1.arrays().values(), p2.arrays().values()))


def test_batches_reshuffle_each_epoch(toy_dir):
    covers, secrets = load_dataset(toy_dir, 16, 0)
    seen = []
    params = M.init_params(0)
    fit(params, covers, secrets, small_config(toy_dir, steps=6, batch_size=2),
        on_batch=lambda step, idx: seen.append(tuple(idx)))
    first, second = seen[:3], seen[3:]
    assert sorted(np.concatenate(first)) == list(range(6))
    assert sorted(np.concatenate(second)) == list(range(6))
    assert first != second


def test_non_finite_loss_names_step(toy_dir, monkeypatch):
    real = train_mod.training_loss
    calls = []

    def poisoned(params, cover, secret):
        calls.append(1)
        out = real(params, cover, secret)
        if len(calls) == 3:
            out.data = np.array(np.nan, dtype=out.dtype)
        return out

    monkeypatch.setattr(train_mod, "training_loss", poisoned)
    with pytest.raises(NumericError, match="step 2"):
        train(small_config(toy_dir, steps=5))


def test_beta_zero_ignores_reveal(toy_dir):
    params, _ = train(small_config(toy_dir, steps=2, beta=0.0))
    init = M.init_params(0, beta=0.0)
    for (name, t), t0 in zip(params.named_tensors(), init.tensors()):
        if name.startswith("reveal"):
            np.testing.assert_array_equal(t.data, t0.data)


# ---------------------------------------------------------------- checkpoint

@pytest.fixture(scope="module")
def trained(toy_dir):
    cfg = small_config(toy_dir, steps=2, mode="spatial")
    params, _ = train(cfg)
    return params, cfg


def test_checkpoint_round_trip_bitwise(tmp_path, trained):
    params, cfg = trained
    save_checkpoint(params, cfg, tmp_path / "m.ckpt")
    loaded, cfg2 = load_checkpoint(tmp_path / "m.ckpt")
    assert cfg2 == cfg and loaded.mode is AttentionMode.SPATIAL
    for (na, a), (nb, b) in zip(params.named_tensors(), loaded.named_tensors()):
        assert na == nb and a.data.tobytes() == b.data.tobytes()


def test_checkpoint_bytes_deterministic(trained):
    params, cfg = trained
    assert ckpt.encode(params, cfg) == ckpt.encode(params, cfg)


def test_checkpoint_header_layout(trained):
    params, cfg = trained
    buf = ckpt.encode(params, cfg)
    assert buf[:4] == b"STGA"
    assert struct.unpack("<I", buf[4:8])[0] == 1
    body_len = 4 * params.num_parameters()
    crc = struct.unpack("<I", buf[-4:])[0]
    assert zlib.crc32(buf[-4 - body_len:-4]) == crc


def test_loaded_model_reproduces_metrics(tmp_path, toy_dir, trained):
    params, cfg = trained
    save_checkpoint(params, cfg, tmp_path / "m.ckpt")
    loaded, _ = load_checkpoint(tmp_path / "m.ckpt")
    data = load_dataset(toy_dir, 16, 0)
    a = evaluate_pairs(M.StegoModel(params), data, "x")
    b = evaluate_pairs(M.StegoModel(loaded), data, "x")
    assert a == b


def test_truncated_by_one_byte(tmp_path, trained):
    buf = ckpt.encode(*trained)
    with pytest.raises(CheckpointLengthError):
        ckpt.decode(buf[:-1])


def test_manifest_mismatch_rejected_before_payload(trained):
    buf = bytearray(ckpt.encode(*trained))
    params = trained[0]
    body_len = 4 * params.num_parameters()
    len_at = len(buf) - 4 - body_len - 8
    struct.pack_into("<Q", buf, len_at, body_len - 4)
    # cut everything after the length field: a reader that touched the payload would
    # report truncation instead of the manifest disagreement
    with pytest.raises(CheckpointLengthError, match="manifest"):
        ckpt.decode(bytes(buf[:len_at + 8]))


def test_version_mismatch(trained):
    buf = bytearray(ckpt.encode(*trained))
    struct.pack_into("<I", buf, 4, 2)
    with pytest.raises(CheckpointVersionError):
        ckpt.decode(bytes(buf))


def test_bad_magic_and_checksum(trained):
    buf = bytearray(ckpt.encode(*trained))
    with pytest.raises(CheckpointCorruptError):
        ckpt.decode(b"XXXX" + bytes(buf[4:]))
    buf[-10] ^= 0xFF
    with pytest.raises(CheckpointCorruptError, match="checksum"):
        ckpt.decode(bytes(buf))


def test_shape_mismatch_names_both_shapes(tmp_path, trained):
    params, cfg = trained
    # a checkpoint written with reduction 4 loaded under a config claiming 8
    other = M.init_params(0, reduction=4)
    buf = ckpt.encode(other, cfg)
    (tmp_path / "r4.ckpt").write_bytes(buf)
    with pytest.raises(CheckpointShapeError, match=r"\(16, 65\).*\(8, 65\)"):
        load_checkpoint(tmp_path / "r4.ckpt")


# ---------------------------------------------------------------- compare

@pytest.fixture(scope="module")
def small_run(toy_dir):
    return compare(small_config(toy_dir, steps=2))


def test_compare_rows_in_table_order(small_run):
    lines = small_run.to_csv().splitlines()
    assert lines[0] == CSV_HEADER
    assert [line.split(",")[0] for line in lines[1:]] == [m.label for m in TABLE_ORDER]
    assert all(len(line.split(",")) == 7 for line in lines)
    assert small_run.ok


def test_compare_csv_deterministic(toy_dir, small_run):
    again = compare(small_config(toy_dir, steps=2))
    assert again.to_csv().encode() == small_run.to_csv().encode()


def test_held_out_pairs_never_trained(toy_dir, monkeypatch):
    seen = set()
    real_fit = compare_mod.fit

    def spy(params, covers, secrets, config, indices=None, on_batch=None):
        return real_fit(params, covers, secrets, config, indices=indices,
                        on_batch=lambda step, idx: seen.update(int(i) for i in idx))

    monkeypatch.setattr(compare_mod, "fit", spy)
    run = compare(small_config(toy_dir, steps=5), modes=(AttentionMode.BASELINE,))
    assert seen and seen.isdisjoint(int(i) for i in run.eval_indices)
    assert seen <= set(int(i) for i in run.train_indices)


def test_failing_mode_does_not_abort(toy_dir, monkeypatch):
    real_init = compare_mod.init_params

    def flaky(seed, mode, *args, **kw):
        if mode is AttentionMode.SPATIAL:
            raise NumericError("synthetic failure")
        return real_init(seed, mode, *args, **kw)

    monkeypatch.setattr(compare_mod, "init_params", flaky)
    run = compare(small_config(toy_dir, steps=1))
    rows = run.to_csv().splitlines()[1:]
    assert rows[2] == "Spatial Only,ERROR,ERROR,ERROR,ERROR,ERROR,ERROR"
    assert "ERROR" not in "".join(rows[:2] + rows[3:])
    assert not run.ok and "synthetic failure" in run.results[2].error


def test_compare_needs_data_dir():
    with pytest.raises(UsageError):
        compare(TrainConfig())
