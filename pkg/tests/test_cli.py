import json

import pytest

from cqa_hardness.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from cqa_hardness.synthetic import synthetic_triples


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    rows = synthetic_triples(100, 12, 800, seed=2)
    (root / "kg.tsv").write_text("".join(f"e{s}\tr{p}\te{o}\n" for s, p, o in rows.tolist()))
    assert main(["split", "--triples", str(root / "kg.tsv"), "--ratios", "0.7,0.15,0.15",
                 "--out", str(root / "split"), "--seed", "1"]) == EXIT_OK
    assert main(["gen-bench", "--split-dir", str(root / "split"), "--quota", "5", "--cap", "0.4", "--types", "1p,2p,2i",
                 "--max-attempts", "20000", "--out-dir", str(root / "bench"), "--seed", "4"]) == EXIT_OK
    return root


def _read_jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


class TestPipeline:
    def test_split_outputs(self, workspace):
        names = {p.name for p in (workspace / "split").iterdir()}
        assert {"train.txt", "valid.txt", "test.txt", "manifest.json"} <= names
        manifest = json.loads((workspace / "split" / "manifest.json").read_text())
        assert sum(manifest["sizes"].values()) == 800

    def test_bench_manifest(self, workspace):
        manifest = json.loads((workspace / "bench" / "manifest.json").read_text())
        assert manifest["counts"]["2p"] == {"1p": 5, "full": 5}
        assert not manifest["shortfall"]

    def test_classify_then_stats(self, workspace, capsys):
        out = workspace / "labels.jsonl"
        assert main(["classify", "--split-dir", str(workspace / "split"),
                     "--queries", str(workspace / "bench" / "2p.1p.jsonl"), "--out", str(out)]) == EXIT_OK
        rows = _read_jsonl(out)
        assert len(rows) == 5 and {r["label"] for r in rows} == {"partial:1p"}
        assert (workspace / "labels.jsonl.manifest.json").exists()
        assert main(["stats", "--labels", str(out)]) == EXIT_OK
        text = capsys.readouterr().out
        assert "100.0" in text and "2p" in text

    def test_answer_evaluate_report(self, workspace, capsys):
        ranks = workspace / "ranks.jsonl"
        assert main(["answer", "--split-dir", str(workspace / "split"), "--queries", str(workspace / "bench"),
                     "--oracle", "--hybrid", "on", "--beam", "512", "--out", str(ranks)]) == EXIT_OK
        assert main(["evaluate", "--benchmark", str(workspace / "bench"), "--rankings", str(ranks),
                     "--out-dir", str(workspace / "eval")]) == EXIT_OK
        report = json.loads((workspace / "eval" / "report.json").read_text())
        for entry in report["types"].values():
            assert entry["overall"]["mrr"] == 1.0
        assert main(["report", "--benchmark", str(workspace / "bench"), "--rankings", str(ranks),
                     "--split-dir", str(workspace / "split"), "--out-dir", str(workspace / "report")]) == EXIT_OK
        text = (workspace / "report" / "report.txt").read_text()
        assert "Most frequent anchor" in text and "intermediate cardinality" in text
        capsys.readouterr()

    def test_train_and_answer_with_checkpoint(self, workspace):
        ckpt = workspace / "model.ckpt"
        assert main(["train-lp", "--split-dir", str(workspace / "split"), "--rank", "8", "--epochs", "2",
                     "--batch-size", "256", "--out", str(ckpt)]) == EXIT_OK
        manifest = json.loads((workspace / "model.ckpt.manifest.json").read_text())
        assert manifest["valid_filtered_mrr"] is not None
        out = workspace / "ranks_model.jsonl"
        assert main(["answer", "--split-dir", str(workspace / "split"),
                     "--queries", str(workspace / "bench" / "2i.full.jsonl"),
                     "--checkpoint", str(ckpt), "--beam", "4", "--out", str(out)]) == EXIT_OK
        rows = _read_jsonl(out)
        assert rows and all(len(r["top"]) == 10 for r in rows)

    def test_gen_train(self, workspace):
        out = workspace / "train_q.jsonl"
        assert main(["gen-train", "--split-dir", str(workspace / "split"), "--n", "3", "--types", "1p,2p",
                     "--out", str(out)]) == EXIT_OK
        manifest = json.loads((workspace / "train_q.jsonl.manifest.json").read_text())
        train_lines = (workspace / "split" / "train.txt").read_text().splitlines()
        assert manifest["counts"] == {"1p": 2 * len(train_lines), "2p": 3}


class TestDeterminism:
    def test_gen_bench_bytes(self, workspace):
        for name in ("b1", "b2"):
            assert main(["gen-bench", "--split-dir", str(workspace / "split"), "--quota", "5", "--cap", "0.4",
                         "--types", "2p", "--out-dir", str(workspace / name), "--seed", "9"]) == EXIT_OK
        for f in ("2p.1p.jsonl", "2p.full.jsonl", "manifest.json"):
            assert (workspace / "b1" / f).read_bytes() == (workspace / "b2" / f).read_bytes()

    def test_config_file_defaults(self, workspace, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 9, "generation": {"quota": 5, "cap": 0.4, "types": ["2p"]}}))
        assert main(["gen-bench", "--config", str(cfg), "--split-dir", str(workspace / "split"),
                     "--out-dir", str(tmp_path / "b")]) == EXIT_OK
        for f in ("2p.1p.jsonl", "2p.full.jsonl"):
            assert (tmp_path / "b" / f).read_bytes() == (workspace / "b1" / f).read_bytes()


class TestErrors:
    def test_missing_flag(self, capsys):
        assert main(["classify", "--queries", "x"]) == EXIT_USAGE
        assert "error" in capsys.readouterr().err

    def test_unknown_config_key(self, workspace, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"generation": {"quota": 5, "bogus": 1}}))
        assert main(["gen-bench", "--config", str(cfg), "--split-dir", str(workspace / "split"),
                     "--out-dir", str(tmp_path / "b")]) == EXIT_USAGE
        cfg.write_text(json.dumps({"nonsense": {}}))
        assert main(["gen-bench", "--config", str(cfg), "--split-dir", str(workspace / "split"),
                     "--out-dir", str(tmp_path / "b")]) == EXIT_USAGE

    def test_fingerprint_mismatch(self, workspace, tmp_path):
        fake = tmp_path / "m.json"
        fake.write_text(json.dumps({"split_fingerprint": "0" * 64}))
        assert main(["gen-bench", "--split-dir", str(workspace / "split"), "--expect-manifest", str(fake),
                     "--quota", "1", "--types", "1p", "--max-attempts", "2000", "--out-dir", str(tmp_path / "b")]) == EXIT_DATA
        good = workspace / "split" / "manifest.json"
        assert main(["gen-bench", "--split-dir", str(workspace / "split"), "--expect-manifest", str(good),
                     "--quota", "1", "--types", "1p", "--max-attempts", "2000", "--out-dir", str(tmp_path / "b")]) == EXIT_OK

    def test_bad_query_file(self, workspace, tmp_path):
        bad = tmp_path / "q.jsonl"
        bad.write_text("{oops\n")
        assert main(["classify", "--split-dir", str(workspace / "split"), "--queries", str(bad),
                     "--out", str(tmp_path / "l.jsonl")]) == EXIT_DATA

    def test_missing_split(self, tmp_path):
        assert main(["gen-bench", "--split-dir", str(tmp_path / "nowhere"), "--out-dir", str(tmp_path / "b")]) \
            == EXIT_DATA

    def test_answer_needs_scorer(self, workspace, tmp_path):
        assert main(["answer", "--split-dir", str(workspace / "split"), "--queries", str(workspace / "bench"),
                     "--out", str(tmp_path / "r.jsonl")]) == EXIT_USAGE

    def test_corrupt_checkpoint(self, workspace, tmp_path):
        ckpt = tmp_path / "bad.ckpt"
        ckpt.write_text("not a checkpoint\n")
        assert main(["answer", "--split-dir", str(workspace / "split"), "--queries", str(workspace / "bench"),
                     "--checkpoint", str(ckpt), "--out", str(tmp_path / "r.jsonl")]) == EXIT_DATA


def test_timestamped_split(tmp_path):
    lines = [f"e{i}\tr0\te{i + 1}\t2018-01-{1 + i % 28:02d}" for i in range(100)]
    (tmp_path / "t.tsv").write_text("\n".join(lines) + "\n")
    assert main(["split", "--timestamped", str(tmp_path / "t.tsv"), "--ratios", "0.8,0.1,0.1",
                 "--out", str(tmp_path / "s")]) == EXIT_OK
    manifest = json.loads((tmp_path / "s" / "manifest.json").read_text())
    assert manifest["sizes"] == {"train": 80, "valid": 10, "test": 10}
