import hashlib

import pytest

from csgparse.cli import build_parser, main

TINY = ["--k", "3", "--batch-size", "2", "--channels", "2", "--embed-dim", "4", "--hidden", "5",
        "--token-dim", "3", "--input-pool", "8"]


def digest(d):
    h = hashlib.sha256()
    for p in sorted(d.rglob("*")):
        if p.is_file():
            h.update(p.name.encode() + p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data") / "d5"
    assert main(["gen-data", "--count", "10", "--seed", "3", "--out", str(d)]) == 0
    return d


def test_gen_data(dataset, tmp_path):
    meta = (dataset / "meta").read_text()
    assert "seed=3" in meta and "count=10" in meta
    assert len(list((dataset / "images").iterdir())) == 10
    again = tmp_path / "again"
    assert main(["gen-data", "--count", "10", "--seed", "3", "--out", str(again)]) == 0
    assert digest(again) == digest(dataset)


def test_gen_data_exhaustion_is_runtime_error(tmp_path, capsys):
    rc = main(["gen-data", "--count", "5", "--length", "1", "--kinds", "s", "--positions", "32:32",
               "--sizes", "16", "--max-attempts", "20", "--out", str(tmp_path / "x")])
    assert rc == 2 and "exhausted" in capsys.readouterr().err


def test_train_eval_and_flags(dataset, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", "--data", str(dataset), "--out", str(run), "--iterations", "20"] + TINY) == 0
    assert len((run / "metrics.csv").read_text().splitlines()) >= 21
    out = tmp_path / "ev"
    assert main(["eval", "--checkpoint", str(run / "checkpoint.bin"), "--data", str(dataset),
                 "--ks", "1,3", "--limit", "2", "--out", str(out)]) == 0
    assert "k=3" in capsys.readouterr().out
    assert (out / "k1" / "programs.txt").exists()
    cfg = tmp_path / "c.cfg"
    cfg.write_text("iterations = 1\nalpha = 0.2\n")
    assert main(["train", "--data", str(dataset), "--out", str(tmp_path / "r2"), "--config", str(cfg),
                 "--no-entropy", "--with-replacement", "--no-grammar-mask"] + TINY) == 0
    from csgparse.train import load_policy
    _, meta = load_policy(tmp_path / "r2" / "checkpoint.bin")
    c = meta["config"]
    assert (c["alpha"], c["sampling"], c["grammar_mask"], c["iterations"]) == (0.0, "iid", False, 1)


def test_eval_vocab_mismatch(dataset, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", "--data", str(dataset), "--out", str(run), "--iterations", "1"] + TINY) == 0
    other = tmp_path / "other"
    assert main(["gen-data", "--count", "3", "--kinds", "c,s", "--out", str(other)]) == 0
    assert main(["eval", "--checkpoint", str(run / "checkpoint.bin"), "--data", str(other)]) == 1
    assert "vocabulary" in capsys.readouterr().err


def test_demo_and_variance(tmp_path):
    assert main(["entropy-demo", "--iterations", "20", "--out", str(tmp_path / "demo")]) == 0
    assert (tmp_path / "demo" / "entropy.csv").exists()
    assert main(["variance-study", "--repeats", "3", "--counts", "2,4", "--out", str(tmp_path / "v.csv")]) == 0
    assert len((tmp_path / "v.csv").read_text().splitlines()) == 9
    assert main(["variance-study", "--model", "policy", "--out", str(tmp_path / "w.csv")]) == 1


def test_exit_codes(tmp_path, capsys):
    assert main(["nope"]) == 1
    assert main(["train", "--data", str(tmp_path)]) == 1  # missing --out
    assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 2
    assert main(["entropy-demo", "--swor-k", "0", "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as e:
        build_parser().parse_args(["--help"])
    assert e.value.code == 0
