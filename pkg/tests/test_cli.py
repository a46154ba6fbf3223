import json

import pytest

from nsdial.cli import main

TINY = ["--hidden", "16", "--emb-dim", "16", "--depth", "1", "--candidates", "3", "--epochs", "1", "--batch-size", "8"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--domain", "movie", "--sizes", "16", "4", "6", "--out", str(root / "data")]) == 0
    return root


def test_gen_data_writes_splits(workdir):
    names = {p.name for p in (workdir / "data").iterdir()}
    assert {"train.jsonl", "dev.jsonl", "test.jsonl"} <= names
    first = json.loads((workdir / "data" / "train.jsonl").read_text().splitlines()[0])
    assert first["turns"] and {"user", "system", "entities", "hop"} <= set(first["turns"][0])


def test_gen_data_bad_hop_mix(tmp_path, capsys):
    assert main(["gen-data", "--sizes", "4", "0", "0", "--hop-mix", "0.5", "0.5", "0.5", "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_split_unseen(workdir, capsys):
    out = workdir / "split.json"
    assert main(["split-unseen", "--data", str(workdir / "data"), "--target-overlap", "0.2", "--out", str(out)]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["achieved_overlap"] <= 0.2 and out.exists()


def test_train_eval_render(workdir, capsys):
    ckpt = workdir / "model.json"
    assert main(["train", "--data", str(workdir / "data"), "--out", str(ckpt), *TINY]) == 0
    assert ckpt.with_suffix(".bin").exists() and ckpt.with_suffix(".toml").exists()
    assert ckpt.with_suffix(".metrics.csv").read_text().startswith("epoch,")
    traces, report = workdir / "traces.jsonl", workdir / "report.json"
    code = main(["eval", "--ckpt", str(ckpt), "--data", str(workdir / "data"), "--check", "--traces", str(traces), "--json", str(report)])
    doc = json.loads(report.read_text())
    assert code == 0 and doc["check"]["ok"] and set(doc["errors"]) == {"structure", "query_states", "candidates", "belief_score"}
    capsys.readouterr()
    turn = next(json.loads(l)["turn"] for l in traces.read_text().splitlines() if json.loads(l)["trace"])
    assert main(["render-proof", "--trace", str(traces), "--turn", str(turn), "--tree", "0:0", "--format", "dot"]) == 0
    assert capsys.readouterr().out.startswith("digraph proof {")


def test_train_on_unseen_split(workdir):
    ckpt = workdir / "unseen.json"
    split = workdir / "split_for_train.json"
    main(["split-unseen", "--data", str(workdir / "data"), "--target-overlap", "0.2", "--out", str(split)])
    args = ["train", "--data", str(workdir / "data"), "--split", str(split), "--out", str(ckpt), *TINY]
    assert main(args) == 0
    assert main(["eval", "--ckpt", str(ckpt), "--data", str(workdir / "data"), "--split", str(split)]) == 0


def test_config_file_and_override(workdir, tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("hidden = 16\nemb_dim = 16\ndepth = 1\ncandidates = 3\nepochs = 1\nbatch_size = 8\n")
    ckpt = tmp_path / "m.json"
    assert main(["train", "--data", str(workdir / "data"), "--config", str(cfg), "--ablation", "no_hre", "--out", str(ckpt)]) == 0
    assert 'ablation = "no_hre"' in ckpt.with_suffix(".toml").read_text()


def test_render_proof_missing_turn(workdir):
    (workdir / "empty.jsonl").write_text("")
    with pytest.raises(SystemExit):
        main(["render-proof", "--trace", str(workdir / "empty.jsonl"), "--turn", "0"])
