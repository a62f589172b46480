import numpy as np
import pytest

from filigrain import cli
from filigrain.config import TrainConfig, format_config
from filigrain.model import read_checkpoint
from filigrain.serialization import FormatError
from filigrain.synth import generate_dataset, save_dataset
from filigrain.training import TrainingAborted, load_model, train

TINY = TrainConfig(train_size=64, test_size=16, batch_size=8, steps=6, warmup_iters=2, image_width=16, image_heads=2,
                   text_width=16, text_heads=2, embed_dim=8, image_layers=1, text_layers=1, checkpoint_every=3)


def test_one_step_log_is_parseable(tmp_path):
    res = train(TINY.replace(steps=3, warmup_iters=1), tmp_path)
    lines = (tmp_path / "train_log.tsv").read_text().splitlines()
    assert lines[0] == "step\tlr\tloss\ttau"
    step, lr, loss, tau = lines[1].split("\t")
    assert int(step) == 0 and float(loss) > 0 and float(tau) >= 0.01 and float(lr) > 0
    assert len(lines) == 4 and len(res.log) == 3
    assert (tmp_path / "final.bin").exists() and (tmp_path / "step_000003.bin").exists()


def test_rerun_is_bit_identical(tmp_path):
    train(TINY, tmp_path / "a")
    train(TINY, tmp_path / "b")
    for name in ("final.bin", "step_000003.bin", "train_log.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_threads_do_not_change_results(tmp_path, monkeypatch):
    train(TINY, tmp_path / "serial")
    monkeypatch.setenv("FILIGRAIN_THREADS", "3")
    train(TINY, tmp_path / "threaded")
    assert (tmp_path / "serial" / "final.bin").read_bytes() == (tmp_path / "threaded" / "final.bin").read_bytes()


def test_global_baseline_and_efficiency_modes_train(tmp_path):
    for cfg in (TINY.replace(mode="global-baseline"), TINY.replace(selection_ratio=0.25, comm_precision="half")):
        res = train(cfg)
        assert all(np.isfinite(r[2]) for r in res.log)


def test_nan_loss_aborts_with_last_good_checkpoint(tmp_path, monkeypatch):
    import filigrain.training as tr

    real = tr.compute_loss
    calls = {"n": 0}

    def poisoned(*a, **k):
        loss, pair = real(*a, **k)
        calls["n"] += 1
        if calls["n"] == 3:
            loss.data = np.array(np.nan)
        return loss, pair

    monkeypatch.setattr(tr, "compute_loss", poisoned)
    with pytest.raises(TrainingAborted):
        train(TINY, tmp_path)
    _, _, arrays = read_checkpoint(tmp_path / "last_good.bin")
    assert all(np.all(np.isfinite(v)) for v in arrays.values())


def test_checkpoint_roundtrip(tmp_path):
    res = train(TINY, tmp_path)
    cfg, model = load_model(tmp_path / "final.bin")
    assert cfg == TINY
    assert model.vocab == res.model.vocab
    for k, v in res.model.params.items():
        assert np.array_equal(model.params[k].data, v.data)
    with pytest.raises(FormatError):
        read_checkpoint(_write(tmp_path / "junk.bin", b"nope"))


def _write(path, data):
    path.write_bytes(data)
    return path


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "toy.cfg").write_text(format_config(TINY))
    assert cli.main(["train", "--config", str(d / "toy.cfg"), "--out", str(d / "run")]) == 0
    return d


def test_cli_eval_retrieval(run_dir, capsys):
    manifest = save_dataset(run_dir / "test", generate_dataset(5, 12, TINY.scene_config(), "test"))
    out = run_dir / "ret.tsv"
    assert cli.main(["eval", "--ckpt", str(run_dir / "run" / "final.bin"), "--task", "retrieval",
                     "--data", str(manifest), "--out", str(out), "--per-query"]) == 0
    metrics = dict(line.split("\t") for line in out.read_text().splitlines() if line.count("\t") == 1
                   and "R@" in line)
    for d in ("i2t", "t2i"):
        assert float(metrics[f"{d}_R@1"]) <= float(metrics[f"{d}_R@5"]) <= float(metrics[f"{d}_R@10"])


def test_cli_eval_zeroshot(run_dir, tmp_path):
    assert cli.main(["make-data", "--out", str(tmp_path / "zs"), "--size", "10", "--single"]) == 0
    out = tmp_path / "zs.tsv"
    assert cli.main(["eval", "--ckpt", str(run_dir / "run" / "final.bin"), "--task", "zeroshot", "--data",
                     str(tmp_path / "zs" / "manifest.tsv"), "--label-field", "shape", "--out", str(out)]) == 0
    acc = float(out.read_text().splitlines()[0].split("\t")[1])
    assert 0.0 <= acc <= 1.0


def test_cli_visualize(run_dir, tmp_path, capsys):
    from filigrain.serialization import write_ppm

    write_ppm(tmp_path / "blank.ppm", np.zeros((32, 32, 3)))
    prefix = tmp_path / "align"
    assert cli.main(["visualize", "--ckpt", str(run_dir / "run" / "final.bin"), "--image", str(tmp_path / "blank.ppm"),
                     "--prompt", "a photo of a red square.", "--label", "red square", "--out", str(prefix)]) == 0
    rows = (tmp_path / "align.txt").read_text().splitlines()
    assert len(rows) == 4
    for row in rows:
        cells = row.replace("*", " ").split()
        assert len(cells) == 4 and all(0 <= int(c) < 9 for c in cells)
    assert (tmp_path / "align.ppm").exists()
    assert "label indices [5, 6]" in capsys.readouterr().out


def test_cli_errors(run_dir, tmp_path):
    from filigrain.serialization import write_ppm

    write_ppm(tmp_path / "img.ppm", np.zeros((32, 32, 3)))
    ckpt = str(run_dir / "run" / "final.bin")
    assert cli.main(["visualize", "--ckpt", ckpt, "--image", str(tmp_path / "img.ppm"), "--prompt", "a dog.",
                     "--label", "cat", "--out", str(tmp_path / "x")]) == 1
    write_ppm(tmp_path / "small.ppm", np.zeros((16, 16, 3)))
    assert cli.main(["visualize", "--ckpt", ckpt, "--image", str(tmp_path / "small.ppm"), "--prompt", "a dog.",
                     "--label", "dog", "--out", str(tmp_path / "x")]) == 2
    (tmp_path / "bad.cfg").write_text("sede = 1\n")
    assert cli.main(["train", "--config", str(tmp_path / "bad.cfg")]) == 2


def test_cli_seed_override(tmp_path):
    (tmp_path / "toy.cfg").write_text(format_config(TINY))
    assert cli.main(["--seed", "9", "train", "--config", str(tmp_path / "toy.cfg"), "--out", str(tmp_path / "r")]) == 0
    cfg, _ = load_model(tmp_path / "r" / "final.bin")
    assert cfg.seed == 9
