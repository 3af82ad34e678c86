import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dmlda.data import (Dataset, SynthConfig, check_disjoint, load_checkpoint, load_features,
                        load_split, save_checkpoint, save_features, synthesize)
from dmlda.density import compute_d0, group_by_class
from dmlda.errors import (CorruptCheckpoint, DimInconsistent, ParseError, SplitOverlap,
                          VersionMismatch)
from dmlda.training import (TrainConfig, checkpoint_from_state, init_state,
                            state_from_checkpoint, train)


def small_config(**kw):
    base = dict(loss="contrastive", iterations=100, classes_per_batch=4, samples_per_class=4,
                hidden=(16,), embed_dim=8, log_every=25, seed=3)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture
def small_train():
    return synthesize(SynthConfig(num_classes=12, samples_per_class=8, input_dim=6, seed=2))[0]


# -- synthesis ------------------------------------------------------------

def test_synthesize_shapes_and_disjoint_split():
    train, test = synthesize(SynthConfig())
    assert train.features.shape == (600, 32) and test.features.shape == (600, 32)
    assert len(train.classes) == 20 and len(test.classes) == 20
    check_disjoint(train, test)


def test_synthesize_zero_sigma_gives_zero_d0():
    train, _ = synthesize(SynthConfig(num_classes=4, samples_per_class=5, sigma=0.0))
    assert all(v == 0.0 for v in compute_d0(group_by_class(train.features, train.labels)).values())


def test_synthesize_is_seeded():
    a, _ = synthesize(SynthConfig(seed=5, num_classes=6))
    b, _ = synthesize(SynthConfig(seed=5, num_classes=6))
    c, _ = synthesize(SynthConfig(seed=6, num_classes=6))
    np.testing.assert_array_equal(a.features, b.features)
    assert not np.array_equal(a.features, c.features)


def test_synth_features_are_not_normalized():
    train, _ = synthesize(SynthConfig(num_classes=4))
    norms = np.linalg.norm(train.features, axis=1)
    assert np.ptp(norms) > 0.1


# -- feature files --------------------------------------------------------

def test_empty_file_is_a_parse_error(tmp_path):
    p = tmp_path / "empty.txt"
    p.write_text("")
    with pytest.raises(ParseError):
        load_features(p)


def test_single_row_with_unicode_minus(tmp_path):
    p = tmp_path / "one.txt"
    p.write_text("c1, 0.5, −0.5\n")
    ds = load_features(p)
    assert len(ds) == 1 and ds.dim == 2
    assert ds.labels[0] == "c1"
    np.testing.assert_array_equal(ds.features, [[0.5, -0.5]])


def test_parse_errors_carry_location(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("# n=2 d=2\n0,1.0,2.0\n1,abc,2.0\n")
    with pytest.raises(ParseError) as info:
        load_features(p)
    assert info.value.line == 3 and info.value.offset == 1


def test_ragged_rows_rejected(tmp_path):
    p = tmp_path / "ragged.txt"
    p.write_text("0,1.0,2.0\n1,1.0\n")
    with pytest.raises(DimInconsistent):
        load_features(p)


@pytest.mark.parametrize("binary", [False, True])
def test_round_trip_is_bit_exact(tmp_path, rng, binary):
    feats = rng.standard_normal((20, 5)) * np.logspace(-300, 300, 5)
    feats[0, 0] = np.nextafter(1.0, 2.0)
    feats[1, 1] = 5e-324
    ds = Dataset(feats, np.arange(20) % 4, "test")
    back = load_features(save_features(ds, tmp_path / "f.bin", binary=binary))
    assert back.features.tobytes() == ds.features.tobytes()
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.split == "test"


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 4)),
              elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_round_trip_property(tmp_path_factory, feats):
    path = tmp_path_factory.mktemp("rt") / "f.txt"
    ds = Dataset(feats, np.zeros(len(feats), dtype=int))
    back = load_features(save_features(ds, path))
    assert back.features.tobytes() == ds.features.tobytes()


def test_load_split_enforces_disjointness(tmp_path):
    train, test = synthesize(SynthConfig(num_classes=4, samples_per_class=3, input_dim=2))
    save_features(train, tmp_path / "a.txt")
    save_features(test, tmp_path / "b.txt")
    save_features(train, tmp_path / "c.txt")
    a, b = load_split(tmp_path / "a.txt", tmp_path / "b.txt")
    assert a.split == "train" and b.split == "test"
    with pytest.raises(SplitOverlap):
        load_split(tmp_path / "a.txt", tmp_path / "c.txt")


# -- checkpoints ----------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, small_train):
    cfg = small_config(iterations=5)
    state, _ = train(cfg, small_train)
    path = save_checkpoint(checkpoint_from_state(state, cfg), tmp_path / "c.ckpt")
    ck = load_checkpoint(path)
    assert ck.iteration == 5 and ck.config == cfg.to_dict()
    for a, b in zip(ck.net.parameters(), state.net.parameters()):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(ck.adam.m + ck.adam.v, state.adam.m + state.adam.v):
        np.testing.assert_array_equal(a, b)
    assert ck.adam.t == state.adam.t
    np.testing.assert_array_equal(ck.density.alphas, state.density.alphas)
    np.testing.assert_array_equal(ck.density.d0, state.density.d0)
    assert ck.density.classes == state.density.classes


def test_truncated_or_modified_checkpoint(tmp_path, small_train):
    cfg = small_config(iterations=2)
    state, _ = train(cfg, small_train)
    path = save_checkpoint(checkpoint_from_state(state, cfg), tmp_path / "c.ckpt")
    blob = path.read_bytes()
    (tmp_path / "t.ckpt").write_bytes(blob[: len(blob) // 2])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path / "t.ckpt")
    flipped = bytearray(blob)
    flipped[len(blob) // 2] ^= 0xFF
    (tmp_path / "f.ckpt").write_bytes(bytes(flipped))
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path / "f.ckpt")
    wrong = bytearray(blob)
    wrong[8] = 99
    (tmp_path / "v.ckpt").write_bytes(bytes(wrong))
    with pytest.raises(VersionMismatch):
        load_checkpoint(tmp_path / "v.ckpt")


@pytest.mark.parametrize("loss", ["contrastive", "triplet", "npair"])
def test_resume_is_bit_exact(tmp_path, small_train, loss):
    cfg = small_config(loss=loss)
    straight, log_straight = train(cfg, small_train)

    half, log_a = train(cfg, small_train, until=50)
    path = save_checkpoint(checkpoint_from_state(half, cfg), tmp_path / "half.ckpt")
    resumed, log_b = train(cfg, small_train, state=state_from_checkpoint(load_checkpoint(path)))

    assert resumed.iteration == straight.iteration == 100
    for a, b in zip(resumed.net.parameters(), straight.net.parameters()):
        assert a.tobytes() == b.tobytes()
    assert resumed.density.alphas.tobytes() == straight.density.alphas.tobytes()
    tail = [r for r in log_straight if r["iteration"] > 50]
    assert log_b == tail
