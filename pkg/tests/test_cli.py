import json

import pytest

from hybridnas.cli import main
DEFAULT_COUNT = 1545151082403742135368496453992459534336000000
from hybridnas.subnet import SubnetArch

SMALL = {"stem_activations": ["gelu"], "stages": [{"width_choices": [32], "depths": [2]}]}


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "small.json").write_text(json.dumps(SMALL))
    return tmp_path


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def manifest(path):
    return json.loads(open(path).read())


def test_count(work, capsys):
    code, out, _ = run(capsys, "space", "count")
    assert code == 0
    assert out == f"count {DEFAULT_COUNT}\nmagnitude 45\n"
    m = manifest(work / "hybridnas-space-count.manifest.json")
    assert m["exit_code"] == 0 and m["command"] == ["space", "count"]
    code, out, _ = run(capsys, "space", "count", "--space", "small.json")
    assert out.startswith("count 576\n")


def test_sample_deterministic(work, capsys):
    _, a, _ = run(capsys, "space", "sample", "--n", "5", "--seed", "3")
    _, b, _ = run(capsys, "space", "sample", "--n", "5", "--seed", "3")
    _, c, _ = run(capsys, "space", "sample", "--n", "5", "--seed", "4")
    assert a == b != c
    lines = a.splitlines()
    assert len(lines) == 5
    SubnetArch.from_dict(json.loads(lines[0]))


def test_enumerate(work, capsys):
    code, out, _ = run(capsys, "space", "enumerate", "--space", "small.json")
    assert code == 0 and len(out.splitlines()) == 576
    code, _, err = run(capsys, "space", "enumerate")
    assert code == 2 and "error" in err
    assert manifest(work / "hybridnas-space-enumerate.manifest.json")["exit_code"] == 2


def test_lut_pipeline(work, capsys):
    assert run(capsys, "lut", "gen-measurements", "--profile", "gpu_like", "--repeats", "2",
               "--noise", "0.01", "--seed", "0", "--out", "meas.json")[0] == 0
    code, out, _ = run(capsys, "lut", "build", "--measurements", "meas.json", "--out", "lut.json")
    assert code == 0 and out.strip() == "entries 572 missing 0"
    assert run(capsys, "lut", "gen-pairs", "--profile", "gpu_like", "--n", "40", "--seed", "1",
               "--out", "pairs.json")[0] == 0
    code, out, _ = run(capsys, "lut", "calibrate", "--lut", "lut.json", "--pairs", "pairs.json",
                       "--out", "calib.json")
    assert code == 0 and out.startswith("kappa ")
    code, _, _ = run(capsys, "lut", "proxy-report", "--lut", "lut.json", "--calib", "calib.json",
                     "--pairs", "pairs.json", "--out", "report.csv", "--scatter", "scatter.csv")
    rows = (work / "report.csv").read_text().splitlines()
    assert code == 0 and rows[0] == "predictor,spearman,rmse_ms" and [r.split(",")[0] for r in rows[1:]] == \
        ["lut", "flops", "params"]
    assert len((work / "scatter.csv").read_text().splitlines()) == 41
    run(capsys, "space", "sample", "--n", "3", "--seed", "0", "--out", "subs.jsonl")
    code, out, _ = run(capsys, "lut", "estimate", "--lut", "lut.json", "--calib", "calib.json",
                       "--subnet", "subs.jsonl")
    assert code == 0 and out.splitlines()[0] == "index,lut_sum_ms,estimate_ms" and len(out.splitlines()) == 4
    m = manifest(work / "calib.json.manifest.json")
    assert set(m["inputs"]) == {"lut.json", "pairs.json"} and "calib.json" in m["artifacts"]


def test_calibrate_exact_line(work, capsys):
    run(capsys, "lut", "gen-measurements", "--profile", "cpu_like", "--out", "meas.json")
    run(capsys, "lut", "build", "--measurements", "meas.json", "--out", "lut.json")
    from hybridnas.latency import LatencyLUT, estimate_uncalibrated, pairs_document
    from hybridnas.space import build_default_space, init_uniform_distribution, sample_subnet
    lut = LatencyLUT.load("lut.json")
    space = build_default_space()
    archs = [sample_subnet(space, init_uniform_distribution(space), i) for i in range(12)]
    pairs = [(a, 2 * estimate_uncalibrated(lut, a) + 3) for a in archs]
    (work / "line.json").write_text(json.dumps({"pairs": pairs_document(pairs)}))
    assert run(capsys, "lut", "calibrate", "--lut", "lut.json", "--pairs", "line.json", "--out", "c.json")[0] == 0
    c = json.loads((work / "c.json").read_text())
    assert c["kappa"] == pytest.approx(2, abs=1e-9) and c["epsilon"] == pytest.approx(3, abs=1e-9)


def test_lut_build_missing(work, capsys):
    doc = {"entries": [{"kind": "stem", "in_width": 3, "out_width": 24, "expansion": None, "kernel": 3,
                        "activation": "relu", "resolution": 56, "latency_ms": 1.0}]}
    (work / "m.json").write_text(json.dumps(doc))
    assert run(capsys, "lut", "build", "--measurements", "m.json", "--out", "l.json")[0] == 2
    code, out, _ = run(capsys, "lut", "build", "--measurements", "m.json", "--out", "l.json", "--allow-missing")
    assert code == 0 and out.strip() == "entries 1 missing 571"


def test_predictor_pipeline(work, capsys):
    assert run(capsys, "predictor", "gen-data", "--n", "240", "--seed", "0", "--out", "data.json")[0] == 0
    code, out, _ = run(capsys, "predictor", "train", "--data", "data.json", "--epochs", "2", "--seed", "0",
                       "--out", "m1.json", "--curve", "curve.csv")
    assert code == 0 and out.startswith("train 200 val 40 ")
    run(capsys, "predictor", "train", "--data", "data.json", "--epochs", "2", "--seed", "0", "--out", "m2.json")
    assert (work / "m1.json").read_bytes() == (work / "m2.json").read_bytes()
    assert len((work / "curve.csv").read_text().splitlines()) == 3
    code, out, err = run(capsys, "predictor", "eval", "--model", "m1.json", "--data", "data.json")
    assert code == 0 and err.startswith("spearman ") and len(out.splitlines()) == 241


def test_search_run_joint(work, capsys):
    run(capsys, "lut", "gen-measurements", "--profile", "gpu_like", "--out", "meas.json")
    run(capsys, "lut", "build", "--measurements", "meas.json", "--out", "lut.json")
    run(capsys, "lut", "gen-pairs", "--profile", "gpu_like", "--seed", "0", "--out", "pairs.json")
    run(capsys, "lut", "calibrate", "--lut", "lut.json", "--pairs", "pairs.json", "--out", "calib.json")
    args = ["search", "run", "--lut", "lut.json", "--calib", "calib.json", "--constraint", "latency_ms=20",
            "--constraint", "params=5e6", "--pop-size", "30", "--generations", "3", "--seed", "0"]
    code, _, _ = run(capsys, *args, "--out", "a.json", "--log", "a.csv")
    assert code == 0
    res = json.loads((work / "a.json").read_text())
    assert res["metrics"]["latency_ms"] < 20 and res["metrics"]["params"] < 5e6
    assert len((work / "a.csv").read_text().splitlines()) == 5
    run(capsys, *args, "--out", "b.json", "--log", "b.csv")
    assert (work / "a.json").read_bytes() == (work / "b.json").read_bytes()
    assert (work / "a.csv").read_bytes() == (work / "b.csv").read_bytes()


def test_search_infeasible_exit_3(work, capsys):
    (work / "cfg.json").write_text(json.dumps({"search": {"max_sample_attempts": 50, "k": 5},
                                               "constraints": {"params": 1000}}))
    code, _, err = run(capsys, "search", "run", "--config", "cfg.json", "--pop-size", "10", "--seed", "0",
                       "--out", "r.json")
    assert code == 3 and "infeasible" in err
    assert manifest(work / "r.json.manifest.json")["exit_code"] == 3


def test_brute_matches_library(work, capsys):
    code, out, _ = run(capsys, "search", "brute", "--space", "small.json", "--constraint", "params=1e9",
                       "--seed", "0", "--out", "b.json")
    assert code == 0 and out.startswith("scanned 576 feasible 576")
    from hybridnas.oracle import brute_force_best, synthetic_accuracy
    from hybridnas.space import SearchSpace
    lib = brute_force_best(SearchSpace.from_dict(SMALL), synthetic_accuracy)
    doc = json.loads((work / "b.json").read_text())
    assert doc["best_value"] == lib.best_value and doc["subnet"] == lib.best.to_dict()


def test_adapt_study(work, capsys):
    code, out, err = run(capsys, "search", "adapt-study", "--space", "small.json", "--trials", "2",
                         "--generations", "2", "--seed", "0")
    assert code == 0 and out.splitlines()[0].startswith("seed,friendly_mhsa")
    assert len(out.splitlines()) == 3 and err.startswith("hostile_fewer_mhsa")


def test_io_error_exit_4(work, capsys):
    code, _, err = run(capsys, "lut", "calibrate", "--lut", "nope.json", "--pairs", "p.json", "--out", "c.json")
    assert code == 4
    assert manifest(work / "c.json.manifest.json")["exit_code"] == 4


def test_oracle_profiles(work, capsys):
    assert run(capsys, "oracle", "profiles", "--out-dir", ".")[0] == 0
    for name in ("cpu_like", "gpu_like", "vpu_like", "attn_friendly", "attn_hostile"):
        assert (work / f"{name}.json").exists()
    m = manifest(work / "hybridnas-oracle-profiles.manifest.json")
    assert len(m["artifacts"]) == 5 and m["config_hash"]


def test_manifest_config_hash_stable(work, capsys):
    run(capsys, "space", "sample", "--n", "2", "--seed", "1", "--out", "s1.jsonl")
    h1 = manifest(work / "s1.jsonl.manifest.json")
    run(capsys, "space", "sample", "--n", "2", "--seed", "1", "--out", "s1.jsonl")
    h2 = manifest(work / "s1.jsonl.manifest.json")
    assert h1["config_hash"] == h2["config_hash"] and h1["artifacts"] == h2["artifacts"]
    assert h1["seed"] == 1 and h1["tool_version"]
