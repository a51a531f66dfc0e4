import json

import pytest

from promptloc import cli
from promptloc.codec import N_CLASSES


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert cli.main(["synth", "--toy", "--n", "4", "--seed", "2", "--out", str(data)]) == 0
    run = root / "run"
    assert cli.main(["train", "--manifest", str(data), "--steps", "3", "--batch-size", "4",
                     "--eval-every", "3", "--out", str(run)]) == 0
    return root, data, run


def test_synth_and_train_outputs(trained):
    _, data, run = trained
    assert (data / "manifest.jsonl").exists()
    rec = json.loads((data / "run_synth.json").read_text())
    assert rec["command"] == "synth" and rec["seed"] == 2 and "manifest" in rec["outputs"]
    for name in ("last.npz", "best.npz", "metrics.jsonl", "run_train.json"):
        assert (run / name).exists()
    train_rec = json.loads((run / "run_train.json").read_text())
    assert set(train_rec) == {"command", "config", "seed", "inputs", "outputs", "version", "wall_seconds",
                              "finished_at"}


def test_eval_report_format(trained, capsys):
    root, data, run = trained
    out = root / "eval.json"
    assert cli.main(["eval", "--checkpoint", str(run / "last.npz"), "--manifest", str(data),
                     "--role", "both", "--out", str(out)]) == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    summary = json.loads(line)
    assert list(summary) == ["acc_pct", "mae_deg", "n", "rho"]
    assert summary["n"] == 8 and summary["rho"] == 5.0
    report = json.loads(out.read_text())
    assert len(report["decisions"]) == 8
    assert set(report["decisions"][0]) == {"id", "role", "truth", "pred", "other"}


def test_infer_and_plot(trained, capsys):
    root, data, run = trained
    dump = root / "post.json"
    assert cli.main(["infer", "--checkpoint", str(run / "last.npz"), "--manifest", str(data),
                     "--record", "1", "--role", "interferer", "--out", str(dump)]) == 0
    decoded = int(capsys.readouterr().out.strip().splitlines()[-1])
    d = json.loads(dump.read_text())
    assert d["decoded"] == decoded and len(d["posterior"]) == N_CLASSES
    assert sum(d["posterior"]) == pytest.approx(1.0)
    recs = [json.loads(x) for x in (data / "manifest.jsonl").read_text().splitlines()]
    assert d["target_azimuth"] == recs[1]["interferer_azimuth"]
    png = root / "post.png"
    assert cli.main(["plot", "--dump", str(dump), "--out", str(png)]) == 0
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_infer_from_wav(trained):
    root, data, run = trained
    rec = json.loads((data / "manifest.jsonl").read_text().splitlines()[0])
    ref = f"{rec['prompt']['category']}:{rec['prompt']['instance']}"
    out = root / "wav_post.json"
    assert cli.main(["infer", "--checkpoint", str(run / "last.npz"), "--mixture", str(data / rec["mixture"]),
                     "--prompt-ref", ref, "--out", str(out)]) == 0
    assert json.loads(out.read_text())["target_azimuth"] is None


@pytest.mark.parametrize("argv", [
    ["synth"],  # neither --toy nor --pool
    ["infer", "--checkpoint", "x.npz"],
    ["infer", "--checkpoint", "x.npz", "--mixture", "m.wav", "--prompt-ref", "dog"],
])
def test_usage_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert cli.main(argv) == 2


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        cli.main(["train"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["eval", "--checkpoint", "a", "--manifest", "b", "--role", "nobody"])
    assert exc.value.code == 2


def test_missing_inputs_exit_1(tmp_path, capsys):
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "nope.npz"), "--manifest", str(tmp_path)]) == 1
    assert "nope.npz" in capsys.readouterr().err
    assert cli.main(["train", "--manifest", str(tmp_path / "none")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"posterior": [0.0] * 5, "target_azimuth": 1, "interferer_azimuth": 2}))
    assert cli.main(["plot", "--dump", str(bad), "--out", str(tmp_path / "x.png")]) == 1


def test_synth_default_dir_from_env(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.DATA_ENV, str(tmp_path / "store"))
    assert cli.main(["synth", "--toy", "--n", "1"]) == 0
    assert (tmp_path / "store" / "toy" / "manifest.jsonl").exists()


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.strip().endswith("0.1.0")
