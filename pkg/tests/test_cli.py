import csv
import json

import numpy as np
import pytest

from gcnslim import io, pipeline
from gcnslim.cli import main
from gcnslim.config import ConfigError, RunConfig, parse_text
from gcnslim.model import cold_score, item_similarity, predict_full
from gcnslim.trainer import EpochRecord, TrainReport

TINY = """\
# tiny synthetic run
source = synthetic
synthetic.num_users = 300
synthetic.num_items = 40
synthetic.target_interactions = 4000
synthetic.num_clusters = 4
seed = 11
K = 1
alpha = 0.05
lambda = 0.5
embedding_dim = 8
learning_rate = 0.01
batch_size = 1024
max_epochs = 3
patience = 5
"""


@pytest.fixture
def tiny_config(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY)
    return p


# -- config ------------------------------------------------------------------

def test_config_parsing_and_overrides(tiny_config):
    cfg = RunConfig.load(tiny_config, {"alpha": "0.1", "nonlinear": "false"})
    assert cfg.model.alpha == 0.1 and cfg.model.lam == 0.5 and not cfg.model.nonlinear
    assert cfg.synthetic.num_items == 40 and cfg.train_config.seed == 11
    assert RunConfig.from_mapping(parse_text(cfg.to_text())) == cfg


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        parse_text("just words")
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({"no_such_key": "1"})
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({"source": "movielens"})
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({"nonlinear": "maybe"})


# -- binary files ------------------------------------------------------------

def test_checkpoint_round_trip_and_corruption(tmp_path):
    params = np.random.default_rng(0).normal(size=(7, 3)).astype(np.float32)
    path = tmp_path / "ck.bin"
    io.save_checkpoint(path, params, {"K": 1}, 4, 3, seed=2, epoch=5)
    header, back = io.load_checkpoint(path)
    assert np.array_equal(back, params) and back.dtype == np.float32
    assert (header["M"], header["N"], header["d"], header["epoch"]) == (4, 3, 3, 5)
    raw = bytearray(path.read_bytes())
    raw[-1] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(io.CorruptFileError, match="checksum"):
        io.load_checkpoint(path)
    path.write_bytes(bytes(raw[:-4]))
    with pytest.raises(io.CorruptFileError):
        io.load_checkpoint(path)
    path.write_bytes(b"garbage")
    with pytest.raises(io.CorruptFileError, match="magic"):
        io.load_checkpoint(path)
    with pytest.raises(FileNotFoundError):
        io.load_checkpoint(tmp_path / "missing.bin")


def test_similarity_export_round_trip(tmp_path):
    B = item_similarity(np.random.default_rng(1).normal(size=(5, 2)))
    io.export_similarity(tmp_path / "B.bin", B, 2)
    header, back = io.load_similarity(tmp_path / "B.bin")
    assert header["N"] == 5 and header["d"] == 2 and np.array_equal(back, B)
    with pytest.raises(io.CorruptFileError):
        io.load_checkpoint(tmp_path / "B.bin")


def test_report_files(tmp_path):
    rep = TrainReport([EpochRecord(1, 0.5, 0.1, 0.2, 1.0), EpochRecord(2, 0.4, float("nan"),
                                                                        float("nan"), 1.0)],
                      best_epoch=1, best_ndcg10=0.2, best_recall10=0.1)
    io.write_train_report(tmp_path, rep)
    rows = list(csv.DictReader((tmp_path / "report.csv").open()))
    assert list(rows[0]) == list(io.REPORT_COLUMNS)
    assert rows[1]["ndcg10"] == ""
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["epochs"][1]["ndcg10"] is None and data["best_epoch"] == 1


# -- commands ----------------------------------------------------------------

def test_prepare_is_byte_identical(tmp_path, tiny_config):
    assert main(["prepare", "--config", str(tiny_config), "--out", str(tmp_path / "a")]) == 0
    assert main(["prepare", "--config", str(tiny_config), "--out", str(tmp_path / "b")]) == 0
    for name in ("train.tsv", "valid.tsv", "test.tsv", "meta.json", "stats.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    stats = json.loads((tmp_path / "a" / "stats.json").read_text())
    assert stats["num_users"] == 300 and stats["num_items"] == 40
    assert stats["num_interactions"] == 4000


def test_train_evaluate_round_trip(tmp_path, tiny_config, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(tiny_config), "--out", str(out)]) == 0
    for name in ("checkpoint.bin", "report.csv", "report.json", "metrics_test.json",
                 "metrics_valid.json", "similarity.bin", "training_curves.png", "config.txt"):
        assert (out / name).exists(), name
    metrics = json.loads((out / "metrics_test.json").read_text())
    assert {"recall_at_n", "ndcg_at_n", "n", "users_evaluated", "phase"} <= set(metrics)
    report = json.loads((out / "report.json").read_text())
    assert len(report["epochs"]) == 3

    # the snapshot alone reproduces the run bit-for-bit
    again = tmp_path / "again"
    assert main(["train", "--config", str(out / "config.txt"), "--out", str(again)]) == 0
    assert io.load_checkpoint(again / "checkpoint.bin")[1].tobytes() == \
        io.load_checkpoint(out / "checkpoint.bin")[1].tobytes()

    ev = tmp_path / "eval"
    assert main(["evaluate", "--config", str(tiny_config), "--checkpoint",
                 str(out / "checkpoint.bin"), "--out", str(ev), "--per-user"]) == 0
    assert json.loads((ev / "metrics_test.json").read_text()) == metrics
    assert (ev / "per_user_test.csv").exists()

    # the exported similarity matrix scores a user's history through cold_score
    _, B = io.load_similarity(out / "similarity.bin")
    X = np.zeros((1, B.shape[0]))
    X[0, [1, 5]] = 1
    assert np.array_equal(cold_score([1, 5], B), predict_full(X, B)[0])


def test_evaluate_corrupt_checkpoint_exits_1(tmp_path, tiny_config):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"nope")
    assert main(["evaluate", "--config", str(tiny_config), "--checkpoint", str(bad)]) == 1


def test_ablate_writes_table(tmp_path, tiny_config):
    out = tmp_path / "abl"
    code = main(["ablate", "--config", str(tiny_config), "--out", str(out), "--seeds", "1,2",
                 "--variants", "GCNSLIM,GCNSLIM+0-LR,GCNMF:embedding_dim=8"])
    assert code == 0
    rows = list(csv.DictReader((out / "ablation.csv").open()))
    assert len(rows) == 6 and all(r["status"] == "ok" for r in rows)
    assert float(rows[0]["train_seconds"]) >= 0
    summary = json.loads((out / "ablation.json").read_text())["summary"]
    assert set(summary) == {"GCNSLIM", "GCNSLIM+0-LR", "GCNMF:embedding_dim=8"}
    assert (out / "ablation.png").exists() and (out / "training_time.png").exists()


def test_ablate_records_failed_runs(tmp_path, tiny_config, monkeypatch):
    real = pipeline.train_and_test

    def flaky(bundle, model, cfg):
        if model.K == 2:
            raise FloatingPointError("diverged")
        return real(bundle, model, cfg)

    monkeypatch.setattr(pipeline, "train_and_test", flaky)
    cfg = RunConfig.load(tiny_config, {"out": str(tmp_path / "abl")})
    rows = pipeline.cmd_ablate(cfg, ["GCNSLIM:K=2", "GCNSLIM"])
    assert [r["status"] for r in rows] == ["failed", "ok"]
    assert "diverged" in rows[0]["error"]
    table = list(csv.DictReader((tmp_path / "abl" / "ablation.csv").open()))
    assert [r["status"] for r in table] == ["failed", "ok"]


def test_ablate_empty_list_is_an_error(tmp_path, tiny_config):
    assert main(["ablate", "--config", str(tiny_config), "--variants", " "]) == 1


def test_gradcheck_command(tmp_path, capsys):
    assert main(["gradcheck", "--only", "K=2,lin,-0,slim,item", "--out", str(tmp_path)]) == 0
    data = json.loads((tmp_path / "gradcheck.json").read_text())
    assert data["max_rel_error"] < 1e-6
    # a deliberately coarse step reports a larger error and fails with exit code 2
    assert main(["gradcheck", "--only", "K=2,LR,-0,slim,item,alpha=0.05",
                 "--epsilon", "0.1"]) == 2
    assert "max relative error" in capsys.readouterr().out
    assert main(["gradcheck", "--only", "no-such-variant"]) == 1
