import numpy as np
import pytest

from dmlda.cli import main
from dmlda.data import load_checkpoint, load_features
from dmlda.training import TrainConfig

SMALL = ["--P", "3", "--K", "4", "--hidden", "16", "--embed-dim", "8", "--log-every", "10"]


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "data"
    assert main(["synth", "--classes", "6", "--per-class", "10", "--dim", "5",
                 "--seed", "7", "--out", str(out)]) == 0
    return out


def train_args(tmp_path, synth_dir, *extra):
    return ["train", "--train", str(synth_dir / "train.txt"), "--out", str(tmp_path / "m.ckpt"),
            "--iterations", "30", *SMALL, *extra]


def test_synth_writes_disjoint_files_deterministically(tmp_path, synth_dir):
    train = load_features(synth_dir / "train.txt")
    test = load_features(synth_dir / "test.txt")
    assert not set(train.classes) & set(test.classes)
    again = tmp_path / "again"
    main(["synth", "--classes", "6", "--per-class", "10", "--dim", "5", "--seed", "7",
          "--out", str(again)])
    for name in ("train.txt", "test.txt"):
        assert (again / name).read_bytes() == (synth_dir / name).read_bytes()


def test_synth_without_out_is_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["synth", "--classes", "4"])
    assert info.value.code == 2


def test_invalid_loss_is_usage_error(tmp_path, synth_dir):
    with pytest.raises(SystemExit) as info:
        main(train_args(tmp_path, synth_dir, "--loss", "hinge"))
    assert info.value.code == 2


def test_train_writes_checkpoint_and_log_echoing_flags(tmp_path, synth_dir):
    assert main(train_args(tmp_path, synth_dir, "--loss", "npair", "--lambda", "0")) == 0
    ck = load_checkpoint(tmp_path / "m.ckpt")
    cfg = TrainConfig.from_dict(ck.config)
    assert (cfg.loss, cfg.lam, cfg.iterations, cfg.classes_per_batch) == ("npair", 0.0, 30, 3)
    assert cfg.hidden == (16,) and cfg.embed_dim == 8
    lines = (tmp_path / "m.ckpt.log").read_text().splitlines()
    assert [dict(t.split("=") for t in l.split())["iteration"] for l in lines] == ["1", "10", "20", "30"]


def test_config_file_and_flag_precedence(tmp_path, synth_dir):
    conf = tmp_path / "run.conf"
    conf.write_text(f"# test run\nloss = triplet\nlambda = 3\nalpha_init = 0.7\n"
                    f"train = {synth_dir / 'train.txt'}\nout = {tmp_path / 'c.ckpt'}\n"
                    "iterations = 5\nhidden = 16\nembed-dim = 8\nP = 3\nK = 4\n")
    assert main(["train", "--config", str(conf), "--lambda", "2"]) == 0
    cfg = TrainConfig.from_dict(load_checkpoint(tmp_path / "c.ckpt").config)
    assert (cfg.loss, cfg.lam, cfg.alpha_init, cfg.iterations) == ("triplet", 2.0, 0.7, 5)

    conf.write_text("bogus = 1\n")
    assert main(["train", "--config", str(conf)]) == 2


def test_train_is_deterministic(tmp_path, synth_dir):
    main(train_args(tmp_path, synth_dir))
    first = (tmp_path / "m.ckpt").read_bytes()
    main(train_args(tmp_path, synth_dir))
    assert (tmp_path / "m.ckpt").read_bytes() == first


def test_resume_through_cli_matches_straight_run(tmp_path, synth_dir):
    straight = tmp_path / "s.ckpt"
    main(["train", "--train", str(synth_dir / "train.txt"), "--out", str(straight),
          "--iterations", "40", *SMALL])
    half = tmp_path / "h.ckpt"
    main(["train", "--train", str(synth_dir / "train.txt"), "--out", str(half),
          "--iterations", "20", *SMALL])
    done = tmp_path / "d.ckpt"
    assert main(["train", "--train", str(synth_dir / "train.txt"), "--resume", str(half),
                 "--out", str(done), "--iterations", "40"]) == 0
    a, b = load_checkpoint(straight), load_checkpoint(done)
    for p, q in zip(a.net.parameters(), b.net.parameters()):
        assert p.tobytes() == q.tobytes()


def test_eval_reports_and_files(tmp_path, synth_dir, capsys):
    main(train_args(tmp_path, synth_dir))
    out = tmp_path / "rep" / "test"
    assert main(["eval", "--checkpoint", str(tmp_path / "m.ckpt"),
                 "--features", str(synth_dir / "test.txt"), "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "R@1" in printed and "R@8" in printed and "NMI" in printed
    rec = dict(l.split("=", 1) for l in (tmp_path / "rep" / "test.records").read_text().splitlines())
    assert {"recall@1", "recall@2", "recall@4", "recall@8", "nmi"} <= set(rec)
    assert (tmp_path / "rep" / "test.txt").read_text() in printed


def test_eval_separable_classes_recall_one(tmp_path):
    from dmlda.data import Dataset, save_features
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.normal(2.0, 0.3, (15, 4)), rng.normal(-2.0, 0.3, (15, 4))])
    save_features(Dataset(x, np.repeat([0, 1], 15)), tmp_path / "two.txt")
    main(["train", "--train", str(tmp_path / "two.txt"), "--out", str(tmp_path / "two.ckpt"),
          "--iterations", "300", "--P", "2", "--K", "6", "--hidden", "16", "--embed-dim", "8"])
    main(["eval", "--checkpoint", str(tmp_path / "two.ckpt"), "--features",
          str(tmp_path / "two.txt"), "--ks", "1", "--out", str(tmp_path / "r")])
    rec = dict(l.split("=", 1) for l in (tmp_path / "r.records").read_text().splitlines())
    assert float(rec["recall@1"]) == 1.0


def test_eval_missing_checkpoint_is_io_error(tmp_path, synth_dir):
    assert main(["eval", "--checkpoint", str(tmp_path / "none.ckpt"),
                 "--features", str(synth_dir / "test.txt")]) == 3


def test_gradcheck_exit_codes(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert out.count(" ok") == 5
    assert main(["gradcheck", "--component", "density"]) == 0
    assert capsys.readouterr().out.startswith("density")
    assert main(["gradcheck", "--perturb", "1e-3"]) == 1
    assert "failed for" in capsys.readouterr().err


def test_embed_exports_unit_rows(tmp_path, synth_dir):
    main(train_args(tmp_path, synth_dir))
    ck = str(tmp_path / "m.ckpt")
    for split in ("train", "test"):
        assert main(["embed", "--checkpoint", ck, "--features", str(synth_dir / f"{split}.txt"),
                     "--out", str(tmp_path / f"{split}.emb")]) == 0
    tr, te = load_features(tmp_path / "train.emb"), load_features(tmp_path / "test.emb")
    np.testing.assert_allclose(np.linalg.norm(te.features, axis=1), 1.0, atol=1e-12)
    assert te.dim == 8 and not set(tr.classes) & set(te.classes)
    first = (tmp_path / "test.emb").read_bytes()
    main(["embed", "--checkpoint", ck, "--features", str(synth_dir / "test.txt"),
          "--out", str(tmp_path / "test.emb")])
    assert (tmp_path / "test.emb").read_bytes() == first
