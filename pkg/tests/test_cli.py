import csv
import json

import numpy as np
import pytest

from amortshap.amortized import AmortizedConfig, AmortizedModel
from amortshap.classifier import load_classifier
from amortshap.cli import build_parser, main, parse_method, run_bench
from amortshap.core import ContractViolation, TokenSequence
from amortshap.runner import read_attributions, read_dataset, verify_run, write_dataset


@pytest.fixture
def workdir(tmp_path):
    assert main(["gen", "--n", "30", "--lengths", "6,10", "--seed", "2",
                 "--out", str(tmp_path / "d.jsonl"), "--classifier-out", str(tmp_path / "c.json")]) == 0
    return tmp_path


def _explain(d, method, out, *extra):
    return main(["explain", "--method", method, "--input", str(d / "d.jsonl"),
                 "--classifier", f"builtin:{d / 'c.json'}", "--out", str(d / out), *extra])


def test_parse_method():
    assert parse_method("ks:200") == ("ks", 200)
    assert parse_method("exact") == ("exact", 0)


def test_explain_output_format(workdir):
    assert _explain(workdir, "svs", "a.jsonl", "--samples", "25", "--seed", "3") == 0
    recs = read_attributions(workdir / "a.jsonl")
    assert len(recs) == 30
    manifest = json.loads((workdir / "a.jsonl.manifest.json").read_text())
    for r in recs:
        assert set(r) == {"id", "label", "method", "m", "seed", "scores", "manifest"}
        assert r["method"] == "svs" and r["m"] == 25 and r["manifest"] == manifest["manifest_hash"]
    assert verify_run(workdir / "a.jsonl") == []


@pytest.mark.parametrize("method,extra", [("exact", []), ("svs", ["--samples", "7"]), ("ks", ["--samples", "30"])])
def test_rerun_and_worker_count_byte_identical(workdir, method, extra):
    _explain(workdir, method, "w1.jsonl", "--workers", "1", *extra)
    _explain(workdir, method, "w8.jsonl", "--workers", "8", *extra)
    _explain(workdir, method, "again.jsonl", "--workers", "1", *extra)
    a = (workdir / "w1.jsonl").read_bytes()
    assert a == (workdir / "w8.jsonl").read_bytes() == (workdir / "again.jsonl").read_bytes()


def test_scores_round_trip_exactly(workdir):
    from amortshap.svs import svs
    from amortshap.core import derive_seed

    _explain(workdir, "svs", "a.jsonl", "--samples", "5", "--seed", "11")
    clf = load_classifier(f"builtin:{workdir / 'c.json'}")
    seqs, _ = read_dataset(workdir / "d.jsonl")
    for x, rec in zip(seqs, read_attributions(workdir / "a.jsonl")):
        y = clf.predicted_label(x)
        assert tuple(rec["scores"]) == svs(x, clf, y, 5, derive_seed(11, x.id, "svs")).scores


def test_exact_beyond_cap_is_budget_error(tmp_path, capsys):
    write_dataset(tmp_path / "long.jsonl", [TokenSequence("long", tuple(f"w{i:04d}" for i in range(20)))])
    main(["gen", "--n", "2", "--out", str(tmp_path / "ignore.jsonl"), "--classifier-out", str(tmp_path / "c.json")])
    rc = main(["explain", "--method", "exact", "--input", str(tmp_path / "long.jsonl"),
               "--classifier", f"builtin:{tmp_path / 'c.json'}", "--out", str(tmp_path / "a.jsonl")])
    assert rc == 1
    assert "BudgetError" in capsys.readouterr().err


def test_unknown_method_rejected(workdir):
    with pytest.raises(SystemExit):
        _explain(workdir, "magic", "a.jsonl")


def test_missing_model(workdir, capsys):
    assert _explain(workdir, "amortized", "a.jsonl") == 2
    assert "needs --model" in capsys.readouterr().err


def test_verify_detects_tampering(workdir, capsys):
    _explain(workdir, "ks", "a.jsonl", "--samples", "20")
    lines = (workdir / "a.jsonl").read_text().splitlines()
    rec = json.loads(lines[0])
    rec["seed"] = 123
    lines[0] = json.dumps(rec)
    (workdir / "a.jsonl").write_text("\n".join(lines) + "\n")
    assert main(["verify", "--attrs", str(workdir / "a.jsonl")]) == 1
    manifest = json.loads((workdir / "a.jsonl.manifest.json").read_text())
    manifest["budget"] = 21
    (workdir / "a.jsonl.manifest.json").write_text(json.dumps(manifest))
    problems = verify_run(workdir / "a.jsonl")
    assert any("manifest hash mismatch" in p for p in problems)


def test_verify_recompute(workdir):
    _explain(workdir, "svs", "a.jsonl", "--samples", "4", "--workers", "3")
    assert main(["verify", "--attrs", str(workdir / "a.jsonl"), "--recompute", "--input", str(workdir / "d.jsonl"),
                 "--classifier", f"builtin:{workdir / 'c.json'}"]) == 0


def test_amortized_and_adapt_via_cli(workdir):
    model = AmortizedModel(AmortizedConfig(vocab_buckets=64, dim=4, hidden=4), 2)
    model.save(workdir / "m.npz")
    assert _explain(workdir, "amortized", "am.jsonl", "--model", str(workdir / "m.npz")) == 0
    assert _explain(workdir, "adapt", "ad.jsonl", "--model", str(workdir / "m.npz"), "--samples", "3") == 0
    man = json.loads((workdir / "ad.jsonl.manifest.json").read_text())
    assert man["options"]["normalization"] == "as_written" and man["options"]["model"]
    assert all(r["m"] == 0 for r in read_attributions(workdir / "am.jsonl"))


def test_stability_command(workdir):
    out = workdir / "st"
    assert main(["stability", "--input", str(workdir / "d.jsonl"), "--classifier", f"builtin:{workdir / 'c.json'}",
                 "--methods", "svs:5,exact", "--out-dir", str(out)]) == 0
    rep = json.loads((out / "stability_svs-5.json").read_text())
    assert rep["topk"] == [5, 10] and len(rep["seeds"]) == 5 and rep["buckets"] == [8, 16, 32]
    assert all(r["n_pairs"] == 10 for r in rep["instances"])
    assert rep["manifest_hash"] == rep["manifest"]["manifest_hash"]
    with open(out / "stability_svs-5.csv") as f:
        assert "seconds" in next(csv.reader(f))
    exact = json.loads((out / "stability_exact.json").read_text())
    assert exact["aggregate"]["spearman"] == 1.0 and exact["aggregate"]["mse"] == 0.0


def test_stability_needs_two_seeds(workdir):
    assert main(["stability", "--input", str(workdir / "d.jsonl"), "--classifier", f"builtin:{workdir / 'c.json'}",
                 "--seeds", "1", "--out-dir", str(workdir / "st")]) == 2


def test_defaults():
    p = build_parser()
    assert p.parse_args(["train", "--refs", "r", "--out", "o"]).epochs == 10
    assert p.parse_args(["train", "--refs", "r", "--out", "o"]).lr == 5e-5
    st = p.parse_args(["stability", "--input", "i", "--classifier", "c", "--out-dir", "o"])
    assert st.topk == "5,10" and st.seeds == 5 and st.methods == "ks:25,ks:200,ks:2000,svs:25"
    assert p.parse_args(["explain", "--method", "svs", "--input", "i", "--classifier", "c", "--out", "o"]).samples == 25


def test_bench_evaluation_counts():
    from amortshap.toygen import ToySpec, generate_dataset

    toy = generate_dataset(ToySpec(n=6, lengths=(10,), seed=9))
    rows = {r["setting"]: r for r in run_bench(toy.seqs, toy.classifier, ["exact", "svs:25"])}
    assert rows["exact"]["min_evals"] == rows["exact"]["max_evals"] == 1024
    assert rows["svs:25"]["max_evals"] <= 25 * 9 + 2


def test_refs_train_faithfulness_pipeline(workdir):
    c = f"builtin:{workdir / 'c.json'}"
    assert main(["refs", "--input", str(workdir / "d.jsonl"), "--classifier", c, "--out", str(workdir / "r.jsonl")]) == 0
    assert main(["train", "--refs", str(workdir / "r.jsonl"), "--epochs", "2", "--buckets", "256", "--dim", "8",
                 "--hidden", "8", "--out", str(workdir / "m.npz"), "--report", str(workdir / "rep.json")]) == 0
    assert json.loads((workdir / "rep.json").read_text())["history"]
    _explain(workdir, "exact", "e.jsonl")
    assert main(["faithfulness", "--input", str(workdir / "d.jsonl"), "--classifier", c,
                 "--attrs", str(workdir / "e.jsonl"), "--out", str(workdir / "f.csv")]) == 0
    assert main(["faithfulness", "--input", str(workdir / "d.jsonl"), "--classifier", c,
                 "--random-seed", "0", "--out", str(workdir / "r.csv")]) == 0
    with open(workdir / "f.csv") as f:
        rows = list(csv.DictReader(f))
    assert float(rows[0]["accuracy"]) == 1.0 and len(rows) == 5
    assert main(["bench", "--input", str(workdir / "d.jsonl"), "--classifier", c, "--model", str(workdir / "m.npz"),
                 "--out", str(workdir / "b.json")]) == 0
    assert json.loads((workdir / "b.json").read_text())["kernel_backend"] in ("cython", "python")


def test_dataset_reader_contracts(tmp_path):
    (tmp_path / "dup.jsonl").write_text('{"id":"a","tokens":["x"]}\n{"id":"a","tokens":["y"]}\n')
    with pytest.raises(ContractViolation):
        read_dataset(tmp_path / "dup.jsonl")
    (tmp_path / "pad.jsonl").write_text('{"id":"a","tokens":["x","[PAD]"]}\n')
    with pytest.raises(ContractViolation):
        read_dataset(tmp_path / "pad.jsonl")


def test_external_classifier_via_cli(workdir):
    import sys

    ext = f"external:{sys.executable} -m amortshap.cli serve --classifier builtin:{workdir / 'c.json'}"
    assert main(["explain", "--method", "svs", "--samples", "3", "--input", str(workdir / "d.jsonl"),
                 "--classifier", ext, "--out", str(workdir / "x.jsonl"), "--workers", "4"]) == 0
    _explain(workdir, "svs", "b.jsonl", "--samples", "3")
    strip = lambda p: [{k: v for k, v in r.items() if k != "manifest"} for r in read_attributions(p)]  # noqa: E731
    assert strip(workdir / "x.jsonl") == strip(workdir / "b.jsonl")


def test_exit_code_reflects_failures(tmp_path):
    seqs = [TokenSequence("ok", ("w0001",)), TokenSequence("long", tuple(f"w{i:04d}" for i in range(16)))]
    write_dataset(tmp_path / "d.jsonl", seqs)
    main(["gen", "--n", "2", "--out", str(tmp_path / "g.jsonl"), "--classifier-out", str(tmp_path / "c.json")])
    args = ["explain", "--input", str(tmp_path / "d.jsonl"), "--classifier", f"builtin:{tmp_path / 'c.json'}"]
    assert main(args + ["--method", "exact", "--out", str(tmp_path / "a.jsonl")]) == 1
    assert len(read_attributions(tmp_path / "a.jsonl")) == 1
    assert main(args + ["--method", "svs", "--out", str(tmp_path / "b.jsonl")]) == 0
    assert np.isfinite(read_attributions(tmp_path / "b.jsonl")[1]["scores"]).all()


def test_bench_skips_instances_over_the_exact_cap():
    from amortshap.toygen import ToySpec, generate_dataset

    toy = generate_dataset(ToySpec(n=8, lengths=(6, 20), seed=9))
    row = run_bench(toy.seqs, toy.classifier, ["exact"])[0]
    n_long = sum(x.L > 15 for x in toy.seqs)
    assert 0 < n_long < 8 and row["skipped"] == n_long and row["n"] == 8 - n_long
