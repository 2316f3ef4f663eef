"""Acceptance criteria, one test each.

Every test prints a ``[PASS]`` or ``[FAIL]`` line (also collected into the
terminal summary) and then asserts.
"""

import json
import time

import numpy as np
from hypothesis import given, settings, strategies as st

import conftest
from test_space import REDUCED, closed_form

from hybridnas.cli import main
from hybridnas.evolution import evolve_distribution, make_constraints, search, SearchConfig
from hybridnas.latency import calibrate, estimate, estimate_uncalibrated, spearman
from hybridnas.oracle import S0_REFERENCE_MS, OracleScorer, s0_variants, synthetic_accuracy, synthetic_latency
from hybridnas.predictor import Hyper, LabeledPair, grad_check, train
from hybridnas.space import (
    SamplingDistribution, SearchSpace, count_subnets, dimensions, enumerate_lut_blocks, enumerate_subnets,
    lut_rows, magnitude, sample_subnet,
)
from hybridnas.studies import adaptivity_study, desk_space, optimality_trials, sampling_efficiency
from hybridnas.subnet import count_params


def report(n, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
    print(line)
    conftest.ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_criterion_01_cardinality(space, capsys):
    t = time.perf_counter()
    code = main(["--manifest", "/dev/null", "space", "count"])
    out = capsys.readouterr().out
    dt = time.perf_counter() - t
    n = int(out.split()[1])
    want = closed_form(4, (2, 3), (2, 3), (6, 7, 8, 9), (4, 5, 6))
    ok = code == 0 and n == want == count_subnets(space) and magnitude(n) == 45 and dt < 1
    report(1, ok, f"count={n} magnitude={magnitude(n)} closed-form equal={n == want} ({dt:.2f}s)")


def test_criterion_02_lut_census(space):
    t = time.perf_counter()
    rows = [(name, len(keys)) for name, keys in lut_rows(space) if name != "head"]
    body = enumerate_lut_blocks(space, include_head=False)
    dt = time.perf_counter() - t
    counts = [c for _, c in rows]
    ok = len(body) == 568 and counts == [8, 96, 16, 96, 16, 24, 96, 96, 24, 96] and dt < 1
    report(2, ok, f"{len(body)} blocks, rows {counts} ({dt:.2f}s)")


def test_criterion_03_count_vs_enumeration():
    t = time.perf_counter()
    sizes = []
    for doc in REDUCED:
        sp = SearchSpace.from_dict(doc)
        n = count_subnets(sp)
        assert n <= 10**6
        sizes.append((n, len(list(enumerate_subnets(sp, 10**6)))))
    dt = time.perf_counter() - t
    ok = len(sizes) >= 5 and all(a == b for a, b in sizes) and dt < 60
    report(3, ok, f"{len(sizes)} spaces, (count, enumerated) {sizes} ({dt:.2f}s)")


_SPACE = desk_space()
_DIMS = dimensions(_SPACE)
_ERRORS = []


def _dist():
    def vec(n):
        return st.lists(st.floats(0, 1), min_size=n, max_size=n).filter(lambda v: sum(v) > 1e-3)

    return st.fixed_dictionaries({k: vec(len(v)) for k, v in _DIMS.items()}).map(
        lambda raw: SamplingDistribution(_SPACE, {k: np.array(v) / sum(v) for k, v in raw.items()}))


@settings(max_examples=1000, deadline=None, database=None)
@given(_dist(), _dist(), st.floats(0, 1))
def _evolved_stays_valid(p, q, lam):
    out = evolve_distribution(p, q, lam)
    worst = max(max(abs(v.sum() - 1), -min(v.min(), 0)) for v in out.probs.values())
    _ERRORS.append(worst)


def test_criterion_04_evolved_stays_valid():
    _ERRORS.clear()
    t = time.perf_counter()
    _evolved_stays_valid()
    total = time.perf_counter() - t
    # time only the evolve step on fixed draws, hypothesis generation dominates otherwise
    rng = np.random.default_rng(0)
    draws = [SamplingDistribution(_SPACE, {k: rng.dirichlet(np.ones(len(v))) for k, v in _DIMS.items()})
             for _ in range(40)]
    t = time.perf_counter()
    for i in range(1000):
        evolve_distribution(draws[i % 40], draws[(i * 7 + 3) % 40], rng.random())
    dt = time.perf_counter() - t
    worst = max(_ERRORS)
    ok = len(_ERRORS) >= 1000 and worst <= 1e-9 and dt < 1
    report(4, ok, f"{len(_ERRORS)} random applications, worst deviation {worst:.1e} "
                  f"(1000 updates {dt:.2f}s, with generation {total:.1f}s)")


def test_criterion_05_calibration_recovery(space, uniform, gpu_device):
    t = time.perf_counter()
    lut, _ = gpu_device
    kappa, eps = 0.8, 1.5
    rng = np.random.default_rng(5)
    archs = [sample_subnet(space, uniform, rng) for _ in range(5100)]
    sums = np.array([estimate_uncalibrated(lut, a) for a in archs])
    truth = kappa * sums + eps
    measured = truth + rng.normal(0, 0.01 * truth.mean(), len(truth))
    c = calibrate(lut, list(zip(archs[:5000], measured[:5000])))
    held = archs[5000:]
    rho = spearman([estimate(lut, c, a) for a in held], measured[5000:])
    dt = time.perf_counter() - t
    ek, ee = abs(c.kappa - kappa) / kappa, abs(c.epsilon - eps) / eps
    ok = ek < 0.02 and ee < 0.02 and rho >= 0.99 and dt < 10
    report(5, ok, f"kappa err {ek:.2%}, epsilon err {ee:.2%}, held-out spearman {rho:.4f} on "
                  f"{len(held)} subnets ({dt:.1f}s)")


def test_criterion_06_predictor(space, uniform):
    t = time.perf_counter()
    rng = np.random.default_rng(6)
    archs = [sample_subnet(space, uniform, rng) for _ in range(6000)]
    pairs = [LabeledPair(a, synthetic_accuracy(a)) for a in archs]
    model = train(pairs[:5000], pairs[5000:], Hyper(), rng_seed=0, space=space)
    rho = max(h["val_spearman"] for h in model.history)
    err = grad_check(model, pairs[5000:5032], max_params=2000)
    dt = time.perf_counter() - t
    ok = rho >= 0.9 and err < 1e-4 and dt < 300
    report(6, ok, f"val spearman {rho:.4f} (5000/1000), grad check max rel err {err:.1e} ({dt:.0f}s)")


def test_criterion_07_search_optimality():
    trials = optimality_trials(range(10))
    wins = sum(tr.ratio >= 0.99 for tr in trials)
    slowest = max(tr.seconds for tr in trials)
    ok = wins >= 9 and slowest < 300
    report(7, ok, f"{wins}/10 seeds reach >=99% of the exhaustive optimum "
                  f"({count_subnets(desk_space())} subnets, slowest seed {slowest:.1f}s)")


def test_criterion_08_sampling_efficiency():
    t = time.perf_counter()
    res = sampling_efficiency()
    dt = time.perf_counter() - t
    ok = res.static_acceptance <= 0.02 and res.ratio <= 0.2 and dt < 120
    report(8, ok, f"static acceptance {res.static_acceptance:.3%}, attempts/accept {res.baseline_attempts:.1f} "
                  f"-> {res.evolved_attempts:.2f} (ratio {res.ratio:.3f}, {dt:.0f}s)")


def test_criterion_09_device_adaptivity():
    t = time.perf_counter()
    rows = adaptivity_study(range(10))
    dt = time.perf_counter() - t
    wins = sum(r.hostile_mhsa < r.friendly_mhsa for r in rows)
    pairs = [(r.friendly_mhsa, r.hostile_mhsa) for r in rows]
    ok = wins > 5 and dt < 600
    report(9, ok, f"hostile profile has fewer MHSA in {wins}/10 seeds, (friendly, hostile) {pairs} ({dt:.0f}s)")


def test_criterion_10_ordering_fidelity(profiles):
    t = time.perf_counter()
    variants = s0_variants()
    matched = 0
    for dev in ("cpu_like", "gpu_like", "vpu_like"):
        ours = {k: synthetic_latency(a, profiles[dev]) for k, a in variants.items()}
        ref = S0_REFERENCE_MS[dev]
        matched += sum(x == y for x, y in zip(sorted(ours, key=ours.get), sorted(ref, key=ref.get)))
    dt = time.perf_counter() - t
    ok = matched == 15 and dt < 1
    report(10, ok, f"{matched}/15 ranked positions match across three devices ({dt:.2f}s)")


def test_criterion_11_joint_constraints(space, gpu_device):
    t = time.perf_counter()
    lut, calib = gpu_device
    bounds = {"latency_ms": 20.0, "params": 5e6}
    cs = make_constraints(bounds, lut, calib)
    best, _ = search(space, SearchConfig(total_gen=20), cs, OracleScorer())
    lat, params = estimate(lut, calib, best), count_params(best)
    dt = time.perf_counter() - t
    ok = lat < bounds["latency_ms"] and params < bounds["params"] and dt < 300
    report(11, ok, f"latency {lat:.2f} < 20 ms and params {params} < 5e6 ({dt:.0f}s)")


SMALL_SPACE = {"stem_activations": ["gelu"], "stages": [{"width_choices": [32], "depths": [2]}]}


def _commands():
    """(argv, primary output files) for every CLI command, in dependency order."""
    return [
        (["space", "count", "--out", "count.txt"], ["count.txt"]),
        (["space", "sample", "--n", "20", "--seed", "1", "--out", "sample.jsonl"], ["sample.jsonl"]),
        (["space", "enumerate", "--space", "small.json", "--out", "enum.jsonl"], ["enum.jsonl"]),
        (["lut", "gen-measurements", "--profile", "gpu_like", "--repeats", "2", "--noise", "0.02",
          "--seed", "2", "--out", "meas.json"], ["meas.json"]),
        (["lut", "build", "--measurements", "meas.json", "--out", "lut.json"], ["lut.json"]),
        (["lut", "gen-pairs", "--profile", "gpu_like", "--n", "30", "--noise", "0.01", "--seed", "3",
          "--out", "pairs.json"], ["pairs.json"]),
        (["lut", "calibrate", "--lut", "lut.json", "--pairs", "pairs.json", "--out", "calib.json"], ["calib.json"]),
        (["lut", "estimate", "--lut", "lut.json", "--calib", "calib.json", "--subnet", "sample.jsonl",
          "--out", "est.csv"], ["est.csv"]),
        (["lut", "proxy-report", "--lut", "lut.json", "--calib", "calib.json", "--pairs", "pairs.json",
          "--out", "proxy.csv", "--scatter", "scatter.csv"], ["proxy.csv", "scatter.csv"]),
        (["predictor", "gen-data", "--n", "240", "--seed", "4", "--out", "data.json"], ["data.json"]),
        (["predictor", "train", "--data", "data.json", "--epochs", "2", "--seed", "5", "--out", "model.json",
          "--curve", "curve.csv"], ["model.json", "curve.csv"]),
        (["predictor", "eval", "--model", "model.json", "--data", "data.json", "--out", "eval.csv"], ["eval.csv"]),
        (["search", "run", "--model", "model.json", "--lut", "lut.json", "--calib", "calib.json",
          "--constraint", "latency_ms=20", "--pop-size", "30", "--generations", "3", "--seed", "6",
          "--out", "search.json", "--log", "search.csv"], ["search.json", "search.csv"]),
        (["search", "brute", "--space", "small.json", "--constraint", "params=1e9", "--seed", "7",
          "--out", "brute.json"], ["brute.json"]),
        (["search", "adapt-study", "--space", "small.json", "--trials", "2", "--generations", "2",
          "--seed", "8", "--out", "adapt.csv"], ["adapt.csv"]),
        (["oracle", "profiles", "--out-dir", "profiles"], ["profiles/cpu_like.json", "profiles/attn_hostile.json"]),
    ]


def test_criterion_12_determinism(tmp_path, monkeypatch, capsys):
    runs = []
    for tag in ("a", "b"):
        d = tmp_path / tag
        (d / "profiles").mkdir(parents=True)
        (d / "small.json").write_text(json.dumps(SMALL_SPACE))
        monkeypatch.chdir(d)
        outputs = {}
        for argv, files in _commands():
            code = main(argv)
            capsys.readouterr()
            assert code == 0, argv
            for f in files:
                outputs[f] = (d / f).read_bytes()
        runs.append(outputs)
    same = [f for f in runs[0] if runs[0][f] == runs[1][f]]
    n_cmd = len(_commands())
    ok = len(same) == len(runs[0])
    report(12, ok, f"{n_cmd} commands rerun, {len(same)}/{len(runs[0])} primary outputs byte-identical")
