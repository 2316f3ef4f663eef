"""Command-line entry point: ``hybridnas <group> <command> [flags]``.

Every command writes one run manifest (JSON) recording the command line,
a hash of the parsed configuration, the seed, digests of the input files
and of every artifact written, and the wall-clock duration.  Exit codes:
0 success, 2 validation or configuration error, 3 infeasible constraints,
4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from dataclasses import asdict, replace
from fractions import Fraction

import numpy as np

from . import __version__
from .evolution import InfeasibleConstraints, SearchConfig, make_constraints, search
from .latency import (
    CalibrationParams, LatencyLUT, build_lut, calibrate, estimate, estimate_uncalibrated, load_pairs,
    measurements_document, pairs_document, parse_entries, proxy_report, scatter_rows, spearman,
)
from .oracle import (
    AccuracyOracle, DeviceProfile, OracleScorer, brute_force_best, end_to_end_latency,
    lut_measurements, make_standard_profiles, synthetic_accuracy,
)
from .predictor import Hyper, LabeledPair, PredictorModel, train
from .space import (
    SearchSpace, SpaceTooLarge, build_default_space, count_subnets, enumerate_subnets,
    init_uniform_distribution, magnitude, sample_subnet,
)
from .studies import adaptivity_study, attention_profiles
from .subnet import SubnetArch, count_flops, count_params

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_IO = 0, 2, 3, 4
FORMAT_VERSION = 1


class Run:
    """Collects inputs and artifacts for the manifest of one command."""

    def __init__(self, args):
        self.args = args
        self.inputs: dict = {}
        self.artifacts: dict = {}
        self.t0 = time.perf_counter()

    def read(self, path):
        with open(path, "rb") as fh:
            data = fh.read()
        self.inputs[path] = hashlib.sha256(data).hexdigest()
        return data

    def read_json(self, path):
        return json.loads(self.read(path))

    def write_text(self, path, text: str):
        data = text.encode()
        with open(path, "wb") as fh:
            fh.write(data)
        self.artifacts[path] = hashlib.sha256(data).hexdigest()

    def write_json(self, path, doc):
        self.write_text(path, json.dumps(doc, indent=1) + "\n")

    def emit(self, text: str):
        """Primary stdout output (or ``--out`` file when the command has one)."""
        out = getattr(self.args, "out", None)
        if out:
            self.write_text(out, text)
        else:
            sys.stdout.write(text)
            self.artifacts["<stdout>"] = hashlib.sha256(text.encode()).hexdigest()

    def manifest(self) -> dict:
        cfg = {k: v for k, v in sorted(vars(self.args).items()) if k not in ("func", "manifest")}
        cfg_json = json.dumps(cfg, sort_keys=True, default=str)
        return {
            "format_version": FORMAT_VERSION,
            "tool_version": __version__,
            "command": [self.args.group, self.args.cmd],
            "config_hash": hashlib.sha256(cfg_json.encode()).hexdigest(),
            "config": json.loads(cfg_json),
            "seed": getattr(self.args, "seed", None),
            "inputs": self.inputs,
            "artifacts": self.artifacts,
            "duration_s": round(time.perf_counter() - self.t0, 6),
        }


def _manifest_path(args) -> str:
    if args.manifest:
        return args.manifest
    out = getattr(args, "out", None)
    if out:
        return out + ".manifest.json"
    return f"hybridnas-{args.group}-{args.cmd}.manifest.json"


# -- shared loaders ------------------------------------------------------------

def _space(run: Run, path):
    return SearchSpace.from_dict(run.read_json(path)) if path else build_default_space()


def _profile(run: Run, spec: str) -> DeviceProfile:
    std = make_standard_profiles()
    if spec in std:
        return std[spec]
    if spec in ("attn_friendly", "attn_hostile"):
        return dict(zip(("attn_friendly", "attn_hostile"), attention_profiles()))[spec]
    return DeviceProfile.from_dict(run.read_json(spec))


def _lut(run: Run, path) -> LatencyLUT:
    return LatencyLUT.from_dict(run.read_json(path))


def _calib(run: Run, path) -> CalibrationParams:
    return CalibrationParams.from_dict(run.read_json(path)) if path else CalibrationParams()


def _pairs(run: Run, path) -> list:
    run.read(path)
    return load_pairs(path)


def _labeled(run: Run, path) -> list[LabeledPair]:
    doc = run.read_json(path)
    items = doc["pairs"] if isinstance(doc, dict) else doc
    return [LabeledPair(SubnetArch.from_dict(p["subnet"]), float(p["accuracy"])) for p in items]


def _subnets(run: Run, path) -> list[SubnetArch]:
    """A subnet JSON document, a JSON list of them, or JSON lines."""
    text = run.read(path).decode()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        return [SubnetArch.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
    if isinstance(doc, dict) and "subnet" in doc:
        doc = doc["subnet"]
    return [SubnetArch.from_dict(d) for d in (doc if isinstance(doc, list) else [doc])]


def _constraints(specs) -> dict:
    out = {}
    for s in specs or []:
        if "=" not in s:
            raise ValueError(f"constraint {s!r} is not metric=bound")
        k, v = s.split("=", 1)
        out[k.strip()] = float(v)
    return out


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _jsonl(docs) -> str:
    return "".join(json.dumps(d, separators=(",", ":")) + "\n" for d in docs)


# -- space ---------------------------------------------------------------------

def cmd_space_count(run, a):
    n = count_subnets(_space(run, a.space))
    run.emit(f"count {n}\nmagnitude {magnitude(n)}\n")


def cmd_space_sample(run, a):
    space = _space(run, a.space)
    dist = init_uniform_distribution(space)
    rng = np.random.default_rng(a.seed)
    run.emit(_jsonl(sample_subnet(space, dist, rng).to_dict() for _ in range(a.n)))


def cmd_space_enumerate(run, a):
    space = _space(run, a.space)
    run.emit(_jsonl(s.to_dict() for s in enumerate_subnets(space, a.cap)))


# -- lut -----------------------------------------------------------------------

def cmd_lut_gen_measurements(run, a):
    space = _space(run, a.space)
    prof = _profile(run, a.profile)
    rng = np.random.default_rng(a.seed)
    meas = []
    for key, ms in lut_measurements(space, prof):
        for _ in range(a.repeats):
            meas.append((key, ms * (1.0 + a.noise * rng.standard_normal()) if a.noise else ms))
    run.write_json(a.out, measurements_document(meas, device=prof.name, compiler="synthetic"))


def cmd_lut_build(run, a):
    doc = run.read_json(a.measurements)
    space = _space(run, a.space)
    lut = build_lut(parse_entries(doc["entries"]), space, device=doc.get("device", "unknown"),
                    compiler=doc.get("compiler", "unknown"), precision=doc.get("precision", "fp32"),
                    aggregate=a.aggregate, allow_missing=a.allow_missing)
    run.write_json(a.out, lut.to_dict())
    print(f"entries {len(lut)} missing {len(lut.missing)}")


def cmd_lut_gen_pairs(run, a):
    space = _space(run, a.space)
    prof = _profile(run, a.profile)
    dist = init_uniform_distribution(space)
    pairs = []
    for i in range(a.n):
        arch = sample_subnet(space, dist, [a.seed, i])
        pairs.append((arch, end_to_end_latency(arch, prof, a.kappa, a.epsilon, a.noise, [a.seed, i, 1])))
    run.write_json(a.out, {"format_version": FORMAT_VERSION, "device": prof.name, "pairs": pairs_document(pairs)})


def cmd_lut_calibrate(run, a):
    lut = _lut(run, a.lut)
    calib = calibrate(lut, _pairs(run, a.pairs))
    run.write_json(a.out, calib.to_dict())
    print(f"kappa {calib.kappa:.6g} epsilon {calib.epsilon:.6g} rmse_ms {calib.rmse:.6g} spearman {calib.spearman:.6g}")


def cmd_lut_estimate(run, a):
    lut = _lut(run, a.lut)
    calib = _calib(run, a.calib)
    rows = [(i, estimate_uncalibrated(lut, s), estimate(lut, calib, s))
            for i, s in enumerate(_subnets(run, a.subnet))]
    run.emit(_csv(("index", "lut_sum_ms", "estimate_ms"), rows))


def cmd_lut_proxy_report(run, a):
    lut = _lut(run, a.lut)
    calib = _calib(run, a.calib)
    pairs = _pairs(run, a.pairs)
    archs, truth = [p[0] for p in pairs], [p[1] for p in pairs]
    report = proxy_report(archs, lut, calib, truth)
    run.write_text(a.out, _csv(("predictor", "spearman", "rmse_ms"), report))
    if a.scatter:
        rows = scatter_rows(archs, lut, calib, truth)
        run.write_text(a.scatter, _csv(tuple(rows[0]), [tuple(r.values()) for r in rows]))


# -- predictor -----------------------------------------------------------------

def cmd_predictor_gen_data(run, a):
    space = _space(run, a.space)
    dist = init_uniform_distribution(space)
    oracle = AccuracyOracle(noise=a.oracle_noise, seed=a.oracle_seed)
    rng = np.random.default_rng(a.seed)
    pairs = []
    for _ in range(a.n):
        arch = sample_subnet(space, dist, rng)
        pairs.append({"subnet": arch.to_dict(), "accuracy": synthetic_accuracy(arch, oracle)})
    run.write_json(a.out, {"format_version": FORMAT_VERSION, "oracle": oracle.to_dict(), "pairs": pairs})


def cmd_predictor_train(run, a):
    pairs = _labeled(run, a.data)
    frac = Fraction(a.split)
    n_train = round(len(pairs) * frac)
    hyper = Hyper(**{k: v for k, v in (("epochs", a.epochs), ("lr", a.lr), ("batch_size", a.batch_size))
                     if v is not None})
    model = train(pairs[:n_train], pairs[n_train:], hyper, a.seed, _space(run, a.space))
    run.write_json(a.out, model.to_dict())
    if a.curve:
        run.write_text(a.curve, _csv(("epoch", "train_l1", "val_l1", "val_spearman"),
                                     [tuple(h.values()) for h in model.history]))
    best = max(h["val_spearman"] for h in model.history)
    print(f"train {n_train} val {len(pairs) - n_train} best_val_spearman {best:.6f}")


def cmd_predictor_eval(run, a):
    model = PredictorModel.from_dict(run.read_json(a.model))
    pairs = _labeled(run, a.data)
    pred = model.predict_many([p.arch for p in pairs])
    truth = np.array([p.accuracy for p in pairs])
    rho = spearman(pred, truth)
    run.emit(_csv(("index", "predicted", "truth"), [(i, p, t) for i, (p, t) in enumerate(zip(pred, truth))]))
    print(f"spearman {rho:.6f}", file=sys.stderr if not a.out else sys.stdout)


# -- search --------------------------------------------------------------------

def _search_setup(run, a):
    doc = run.read_json(a.config) if a.config else {}
    cfg = SearchConfig.from_dict(doc.get("search", {}))
    overrides = {k: v for k, v in (("pop_size", a.pop_size), ("total_gen", a.generations),
                                   ("workers", a.workers)) if v is not None}
    cfg = replace(cfg, rng_seed=a.seed, **overrides)
    bounds = dict(doc.get("constraints", {}))
    bounds.update(_constraints(a.constraint))
    return cfg, bounds


def cmd_search_run(run, a):
    space = _space(run, a.space)
    cfg, bounds = _search_setup(run, a)
    lut = _lut(run, a.lut) if a.lut else None
    calib = _calib(run, a.calib)
    cs = make_constraints(bounds, lut, calib)
    if a.model == "oracle":
        model = OracleScorer()
    else:
        model = PredictorModel.from_dict(run.read_json(a.model))
    best, log = search(space, cfg, cs, model)
    metrics = dict(log.best_metrics, predicted_accuracy=log.best_pred)
    if lut is not None:
        metrics["latency_ms"] = estimate(lut, calib, best)
    run.write_json(a.out, {"format_version": FORMAT_VERSION, "subnet": best.to_dict(), "metrics": metrics,
                           "constraints": bounds, "config": cfg.to_dict()})
    if a.log:
        run.write_text(a.log, log.to_csv())
    print(" ".join(f"{k} {v:.6g}" for k, v in sorted(metrics.items())))


def cmd_search_brute(run, a):
    space = _space(run, a.space)
    bounds = _constraints(a.constraint)
    lut = _lut(run, a.lut) if a.lut else None
    calib = _calib(run, a.calib)
    cs = make_constraints(bounds, lut, calib)
    lat = cs.get("latency_ms")
    res = brute_force_best(space, synthetic_accuracy, [(c.estimator, c.bound) for c in cs], cap=a.cap,
                           latency=lat.estimator if lat else None)
    doc = {"format_version": FORMAT_VERSION, "scanned": res.scanned, "feasible": res.feasible,
           "best_value": res.best_value, "min_latency_ms": res.min_latency,
           "subnet": res.best.to_dict() if res.best else None, "constraints": bounds}
    if res.best is not None:
        doc["metrics"] = {"params": count_params(res.best), "flops": count_flops(res.best)}
    run.write_json(a.out, doc)
    print(f"scanned {res.scanned} feasible {res.feasible} best {res.best_value}")


def cmd_search_adapt_study(run, a):
    space = _space(run, a.space)
    cfg = SearchConfig(total_gen=a.generations)
    base = _profile(run, a.profile)
    seeds = [a.seed + i for i in range(a.trials)]
    rows = adaptivity_study(seeds, space, attention_profiles(base, a.hostile_factor), a.quantile, cfg)
    run.emit(_csv(("seed", "friendly_mhsa", "hostile_mhsa", "friendly_bound_ms", "hostile_bound_ms"),
                  [tuple(asdict(r).values()) for r in rows]))
    wins = sum(r.hostile_mhsa < r.friendly_mhsa for r in rows)
    print(f"hostile_fewer_mhsa {wins}/{len(rows)}", file=sys.stderr if not a.out else sys.stdout)


# -- oracle --------------------------------------------------------------------

def cmd_oracle_profiles(run, a):
    profs = make_standard_profiles()
    friendly, hostile = attention_profiles()
    profs.update({friendly.name: friendly, hostile.name: hostile})
    for name, p in profs.items():
        run.write_json(os.path.join(a.out_dir, f"{name}.json"), p.to_dict())


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybridnas", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--manifest", help="manifest path (default: next to --out, else in the working directory)")
    groups = p.add_subparsers(dest="group", required=True)

    def cmd(group, name, func, help_):
        sp = group.add_parser(name, help=help_)
        sp.set_defaults(func=func, cmd=name)
        return sp

    def space_flag(sp):
        sp.add_argument("--space", help="search space JSON (default: full space)")

    g = groups.add_parser("space", help="count, sample or enumerate subnets").add_subparsers(dest="cmd", required=True)
    sp = cmd(g, "count", cmd_space_count, "exact number of subnets")
    space_flag(sp)
    sp.add_argument("--out")
    sp = cmd(g, "sample", cmd_space_sample, "uniform samples as JSON lines")
    space_flag(sp)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out")
    sp = cmd(g, "enumerate", cmd_space_enumerate, "every subnet of a small space as JSON lines")
    space_flag(sp)
    sp.add_argument("--cap", type=int, default=10**6)
    sp.add_argument("--out")

    g = groups.add_parser("lut", help="latency lookup tables").add_subparsers(dest="cmd", required=True)
    sp = cmd(g, "gen-measurements", cmd_lut_gen_measurements, "synthetic per-block measurement file")
    space_flag(sp)
    sp.add_argument("--profile", required=True, help="standard profile name or profile JSON")
    sp.add_argument("--repeats", type=int, default=1)
    sp.add_argument("--noise", type=float, default=0.0, help="relative noise per measurement")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp = cmd(g, "build", cmd_lut_build, "aggregate measurements into a LUT")
    space_flag(sp)
    sp.add_argument("--measurements", required=True)
    sp.add_argument("--aggregate", choices=("mean", "median"), default="mean")
    sp.add_argument("--allow-missing", action="store_true")
    sp.add_argument("--out", required=True)
    sp = cmd(g, "gen-pairs", cmd_lut_gen_pairs, "synthetic (subnet, end-to-end ms) pairs")
    space_flag(sp)
    sp.add_argument("--profile", required=True)
    sp.add_argument("--n", type=int, default=10)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--kappa", type=float, default=0.8)
    sp.add_argument("--epsilon", type=float, default=1.5)
    sp.add_argument("--noise", type=float, default=0.0)
    sp.add_argument("--out", required=True)
    sp = cmd(g, "calibrate", cmd_lut_calibrate, "fit measured = kappa * lut_sum + epsilon")
    sp.add_argument("--lut", required=True)
    sp.add_argument("--pairs", required=True)
    sp.add_argument("--out", required=True)
    sp = cmd(g, "estimate", cmd_lut_estimate, "calibrated latency of subnets")
    sp.add_argument("--lut", required=True)
    sp.add_argument("--calib")
    sp.add_argument("--subnet", required=True, help="subnet JSON, JSON list or JSON lines")
    sp.add_argument("--out")
    sp = cmd(g, "proxy-report", cmd_lut_proxy_report, "LUT vs FLOPs/params as latency predictors")
    sp.add_argument("--lut", required=True)
    sp.add_argument("--calib")
    sp.add_argument("--pairs", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--scatter")

    g = groups.add_parser("predictor", help="accuracy predictor").add_subparsers(dest="cmd", required=True)
    sp = cmd(g, "gen-data", cmd_predictor_gen_data, "oracle-labeled subnet/accuracy pairs")
    space_flag(sp)
    sp.add_argument("--n", type=int, default=6000)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--oracle-noise", type=float, default=AccuracyOracle.noise)
    sp.add_argument("--oracle-seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp = cmd(g, "train", cmd_predictor_train, "train on the leading split, validate on the rest")
    space_flag(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", default="5/6", help="training fraction, e.g. 5/6")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--curve", help="training curve CSV")
    sp = cmd(g, "eval", cmd_predictor_eval, "scatter CSV and Spearman on labeled pairs")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out")

    g = groups.add_parser("search", help="evolutionary and exhaustive search").add_subparsers(dest="cmd", required=True)
    sp = cmd(g, "run", cmd_search_run, "constrained evolutionary search")
    space_flag(sp)
    sp.add_argument("--config", help="JSON with 'search' and 'constraints' sections")
    sp.add_argument("--constraint", action="append", help="metric=bound, repeatable")
    sp.add_argument("--model", default="oracle", help="predictor JSON, or 'oracle'")
    sp.add_argument("--lut")
    sp.add_argument("--calib")
    sp.add_argument("--pop-size", type=int)
    sp.add_argument("--generations", type=int)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--log", help="generation log CSV")
    sp = cmd(g, "brute", cmd_search_brute, "exhaustive constrained optimum of the accuracy oracle")
    space_flag(sp)
    sp.add_argument("--constraint", action="append")
    sp.add_argument("--lut")
    sp.add_argument("--calib")
    sp.add_argument("--cap", type=int, default=10**6)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp = cmd(g, "adapt-study", cmd_search_adapt_study, "MHSA count on attention-friendly vs hostile devices")
    space_flag(sp)
    sp.add_argument("--profile", default="cpu_like", help="base profile")
    sp.add_argument("--hostile-factor", type=float, default=10.0)
    sp.add_argument("--quantile", type=float, default=0.3)
    sp.add_argument("--trials", type=int, default=10)
    sp.add_argument("--generations", type=int, default=20)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out")

    g = groups.add_parser("oracle", help="synthetic device profiles").add_subparsers(dest="cmd", required=True)
    sp = cmd(g, "profiles", cmd_oracle_profiles, "write the standard profiles as JSON")
    sp.add_argument("--out-dir", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    run = Run(args)
    code, error = EXIT_OK, None
    try:
        args.func(run, args)
    except InfeasibleConstraints as exc:
        code, error = EXIT_INFEASIBLE, f"infeasible constraints: {exc}"
    except OSError as exc:
        code, error = EXIT_IO, str(exc)
    except (SpaceTooLarge, ValueError, KeyError, TypeError) as exc:
        code, error = EXIT_CONFIG, f"{type(exc).__name__}: {exc}"
    if error:
        print(f"error: {error}", file=sys.stderr)
    doc = run.manifest()
    doc.update(exit_code=code, error=error)
    try:
        with open(_manifest_path(args), "w") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
    except OSError as exc:
        print(f"error: cannot write manifest: {exc}", file=sys.stderr)
        return code or EXIT_IO
    return code


if __name__ == "__main__":
    sys.exit(main())
