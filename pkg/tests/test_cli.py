import csv
import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from sgz.cli import main
from sgz.graph_model import load_json

FIX = Path(__file__).parent / "fixtures"
TINY, TINY_CKPT = str(FIX / "tiny.json"), str(FIX / "tiny.sgz")


def run(*argv) -> int:
    return main([str(a) for a in argv])


def test_synth_deterministic_and_seed_env(tmp_path, monkeypatch):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"num_graphs": 5, "max_nodes": 12}))
    a, b, c = tmp_path / "a.json", tmp_path / "b.json", tmp_path / "c_out.json"
    assert run("synth", "--config", cfg, "--out", a, "--seed", 3) == 0
    assert run("synth", "--config", cfg, "--out", b, "--seed", 3) == 0
    assert a.read_bytes() == b.read_bytes()
    monkeypatch.setenv("SGZ_SEED", "4")
    assert run("synth", "--config", cfg, "--out", c, "--seed", 3) == 0
    assert c.read_bytes() != a.read_bytes()
    man = json.loads(Path(str(c) + ".manifest.json").read_text())
    assert man["seed"] == 4 and man["command"] == "synth" and man["dataset_sha256"]


def test_usage_errors(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run("synth", "--config", cfg, "--out", tmp_path / "x.json") == 2
    assert run("eval", "--nope") == 2
    assert run("eval", "--ckpt", TINY_CKPT, "--data", TINY, "--ablate", "edge") == 2
    assert run("eval", "--ckpt", TINY_CKPT, "--data", TINY, "--dist", "gaussian") == 2


def test_data_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("verify", "--data", bad, "--ckpt", TINY_CKPT) == 3
    assert run("verify", "--data", TINY, "--ckpt", tmp_path / "missing.sgz") == 3


def test_verify_fixture_exit_zero(capsys):
    assert run("verify", "--data", TINY, "--ckpt", TINY_CKPT) == 0
    assert capsys.readouterr().out.strip().endswith("PASS")


def test_compress_decompress_cli(tmp_path):
    out = tmp_path / "z"
    assert run("compress", "--ckpt", TINY_CKPT, "--in", TINY, "--out", out) == 0
    files = sorted(out.glob("*.sgz1"))
    assert len(files) == len(load_json(TINY).graphs)
    back = tmp_path / "back.json"
    assert run("decompress", "--ckpt", TINY_CKPT, "--in", out, "--out", back) == 0
    from sgz.pipeline import prepare
    assert load_json(back).graphs == [prepare(g)[0] for g in load_json(TINY).graphs]


def test_keep_order_cli(tmp_path):
    out = tmp_path / "z"
    assert run("compress", "--ckpt", TINY_CKPT, "--in", TINY, "--out", out, "--keep-order") == 0
    back = tmp_path / "back.json"
    assert run("decompress", "--ckpt", TINY_CKPT, "--in", out, "--out", back) == 0
    assert load_json(back).graphs == [g.canonical() for g in load_json(TINY).graphs]


def test_truncated_decompress_exit_three(tmp_path, capsys):
    out = tmp_path / "z"
    assert run("compress", "--ckpt", TINY_CKPT, "--in", TINY, "--out", out) == 0
    f = sorted(out.glob("*.sgz1"))[0]
    f.write_bytes(f.read_bytes()[:-2])
    assert run("decompress", "--ckpt", TINY_CKPT, "--in", f, "--out", tmp_path / "o.json") == 3
    err = capsys.readouterr().err
    assert "truncated at byte" in err and f.name in err


def test_eval_report_and_cir(tmp_path):
    reports = {}
    for pre in ("none", "scc"):
        rep = tmp_path / f"{pre}.csv"
        assert run("eval", "--ckpt", TINY_CKPT, "--data", TINY, "--split", "all",
                   "--preproc", pre, "--report", rep, "--jobs", 1) == 0
        with open(rep, newline="") as fh:
            reports[pre] = list(csv.DictReader(fh))
        man = json.loads(Path(str(rep) + ".manifest.json").read_text())
        assert man["checkpoint_sha256"] and man["metrics"]["lossless"]
    cols = set(reports["scc"][0])
    assert {"dataset", "context", "dist", "order", "preproc", "ratio", "bits_per_node",
            "cir"} <= cols
    for a, b in zip(reports["none"], reports["scc"]):
        assert float(b["cir"]) >= float(a["cir"])


def test_eval_report_regenerable(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for rep in (a, b):
        assert run("eval", "--ckpt", TINY_CKPT, "--data", TINY, "--split", "all",
                   "--report", rep, "--jobs", 1) == 0
    # timing lives only in the manifest, so the rows regenerate byte for byte
    assert a.read_bytes() == b.read_bytes()


def test_ablate_context_prefix():
    # "context=" with an empty list disables nothing, which matches the full fixture model
    assert run("eval", "--ckpt", TINY_CKPT, "--data", TINY, "--ablate", "context=",
               "--limit", "1", "--jobs", 1) == 0
    assert run("eval", "--ckpt", TINY_CKPT, "--data", TINY, "--ablate", "context=node",
               "--limit", "1", "--jobs", 1) == 2


def test_train_cli_small(tmp_path):
    data = tmp_path / "d.json"
    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"num_graphs": 10, "max_nodes": 10}))
    assert run("synth", "--config", cfg, "--out", data) == 0
    mcfg = tmp_path / "m.json"
    mcfg.write_text(json.dumps({"hidden": 8, "prior_features": 8, "batch_size": 4}))
    ck = tmp_path / "m.sgz"
    assert run("train", "--data", data, "--config", mcfg, "--out", ck, "--epochs", 1,
               "--ablate", "edge", "--dist", "laplacian") == 0
    man = json.loads(Path(str(ck) + ".manifest.json").read_text())
    assert man["config"]["model"]["context"] == ["node", "structure"]
    assert man["config"]["model"]["dist"] == "laplacian"
    assert run("eval", "--ckpt", ck, "--data", data, "--ablate", "edge", "--dist", "laplacian",
               "--split", "all", "--jobs", 1) == 0


@pytest.mark.skipif(shutil.which("sgz") is None, reason="console script not installed")
def test_console_script():
    res = subprocess.run(["sgz", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "sgz" in res.stdout
    res = subprocess.run([sys.executable, "-m", "sgz", "verify", "--data", TINY, "--ckpt",
                          TINY_CKPT, "--limit", "2"], capture_output=True, text=True)
    assert res.returncode == 0
