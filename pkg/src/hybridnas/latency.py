"""Block latency lookup tables with linear end-to-end calibration."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .space import SearchSpace, enumerate_lut_blocks
from .subnet import BlockKey, SubnetArch, count_flops, count_params

FORMAT_VERSION = 1


class MissingBlocks(ValueError):
    def __init__(self, keys):
        self.keys = list(keys)
        super().__init__(f"{len(self.keys)} LUT keys have no measurement, e.g. {self.keys[:3]}")


class NonPositiveLatency(ValueError):
    pass


class UnknownBlock(KeyError):
    def __init__(self, key):
        self.key = key
        super().__init__(f"block not in LUT: {key}")


class DegenerateFit(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class TooFew(ValueError):
    pass


@dataclass(frozen=True)
class LatencyLUT:
    table: dict
    device: str = "unknown"
    compiler: str = "unknown"
    precision: str = "fp32"
    missing: tuple = field(default=(), compare=False)

    def __len__(self):
        return len(self.table)

    def __contains__(self, key):
        return key in self.table

    def __getitem__(self, key) -> float:
        try:
            return self.table[key]
        except KeyError:
            raise UnknownBlock(key) from None

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "device": self.device,
            "compiler": self.compiler,
            "precision": self.precision,
            "entries": [dict(k._asdict(), latency_ms=v) for k, v in self.table.items()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LatencyLUT":
        meas = parse_entries(d["entries"])
        return cls({k: v for k, v in meas}, d.get("device", "unknown"),
                   d.get("compiler", "unknown"), d.get("precision", "fp32"))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "LatencyLUT":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def key_from_dict(d: dict) -> BlockKey:
    def opt_int(v):
        return None if v is None else int(v)

    return BlockKey(d["kind"], int(d["in_width"]), int(d["out_width"]), opt_int(d.get("expansion")),
                    opt_int(d.get("kernel")), d.get("activation"), int(d["resolution"]))


def parse_entries(entries: Iterable[dict]) -> list[tuple[BlockKey, float]]:
    return [(key_from_dict(e), float(e["latency_ms"])) for e in entries]


def measurements_document(measurements, device="synthetic", compiler="none", precision="fp32") -> dict:
    """Measurement-file document: same schema as a LUT, keys may repeat."""
    return {
        "format_version": FORMAT_VERSION,
        "device": device,
        "compiler": compiler,
        "precision": precision,
        "entries": [dict(k._asdict(), latency_ms=float(v)) for k, v in measurements],
    }


def build_lut(measurements: Sequence[tuple[BlockKey, float]], space: Optional[SearchSpace] = None,
              device: str = "unknown", compiler: str = "unknown", precision: str = "fp32",
              aggregate: str = "mean", allow_missing: bool = False) -> LatencyLUT:
    """Aggregate raw per-block measurements into a LUT.

    Repeated keys are averaged (``aggregate="median"`` for outlier-prone
    devices).  With a ``space``, every key the space can produce must be
    covered unless ``allow_missing`` is set, in which case the uncovered keys
    are recorded on ``LatencyLUT.missing``.
    """
    if not measurements:
        raise ValueError("no measurements")
    if aggregate not in ("mean", "median"):
        raise ValueError("aggregate must be 'mean' or 'median'")
    grouped: dict = {}
    for key, ms in measurements:
        if not ms > 0:
            raise NonPositiveLatency(f"{key}: {ms} ms")
        grouped.setdefault(BlockKey(*key), []).append(float(ms))
    agg = np.mean if aggregate == "mean" else np.median
    table = {k: float(agg(v)) for k, v in grouped.items()}
    missing = ()
    if space is not None:
        missing = tuple(k for k in enumerate_lut_blocks(space) if k not in table)
        if missing and not allow_missing:
            raise MissingBlocks(missing)
    return LatencyLUT(table, device, compiler, precision, missing)


def estimate_uncalibrated(lut: LatencyLUT, arch: SubnetArch) -> float:
    return sum(lut[b] for b in arch.blocks())


@dataclass(frozen=True)
class CalibrationParams:
    kappa: float = 1.0
    epsilon: float = 0.0
    rmse: float = 0.0
    spearman: float = float("nan")
    n_pairs: int = 0

    def to_dict(self) -> dict:
        return {"format_version": FORMAT_VERSION, "kappa": self.kappa, "epsilon": self.epsilon,
                "rmse_ms": self.rmse, "spearman": self.spearman, "n_pairs": self.n_pairs}

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationParams":
        return cls(float(d["kappa"]), float(d["epsilon"]), float(d.get("rmse_ms", 0.0)),
                   float(d.get("spearman", float("nan"))), int(d.get("n_pairs", 0)))


def fit_line(x, y) -> tuple[float, float]:
    """Closed-form least squares for ``y = slope * x + intercept``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    if n < 2:
        raise DegenerateFit("need at least two points")
    mx, my = x.mean(), y.mean()
    sxx = float(np.sum((x - mx) ** 2))
    if sxx <= 1e-12 * max(1.0, float(np.sum(x * x))):
        raise DegenerateFit("all predictor values are equal")
    slope = float(np.sum((x - mx) * (y - my)) / sxx)
    return slope, float(my - slope * mx)


def calibrate(lut: LatencyLUT, pairs: Sequence[tuple[SubnetArch, float]]) -> CalibrationParams:
    """Fit ``measured = kappa * lut_sum + epsilon`` on (subnet, measured ms) pairs."""
    if len(pairs) < 2:
        raise DegenerateFit("need at least two calibration pairs")
    sums = np.array([estimate_uncalibrated(lut, a) for a, _ in pairs])
    meas = np.array([float(m) for _, m in pairs])
    kappa, eps = fit_line(sums, meas)
    if kappa <= 0:
        warnings.warn(f"non-positive calibration scale kappa={kappa:.4g}", RuntimeWarning)
    pred = kappa * sums + eps
    rmse = float(np.sqrt(np.mean((pred - meas) ** 2)))
    return CalibrationParams(kappa, eps, rmse, spearman(pred, meas), len(pairs))


def estimate(lut: LatencyLUT, calib: CalibrationParams, arch: SubnetArch) -> float:
    return calib.kappa * estimate_uncalibrated(lut, arch) + calib.epsilon


def spearman(xs, ys) -> float:
    """Spearman rank correlation with average ranks for ties.

    Returns ``nan`` when either input is constant.
    """
    if len(xs) != len(ys):
        raise LengthMismatch(f"{len(xs)} != {len(ys)}")
    if len(xs) < 2:
        raise TooFew("need at least two observations")
    rx = rankdata(xs)
    ry = rankdata(ys)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    den = math.sqrt(float(np.sum(rx * rx)) * float(np.sum(ry * ry)))
    if den == 0:
        return float("nan")
    return max(-1.0, min(1.0, float(np.sum(rx * ry)) / den))


class ProxyRow(NamedTuple):
    predictor: str
    spearman: float
    rmse_ms: float


def proxy_report(archs: Sequence[SubnetArch], lut: LatencyLUT, calib: CalibrationParams,
                 ground_truth_ms: Sequence[float]) -> list[ProxyRow]:
    """Compare the calibrated LUT with FLOPs and parameter-count proxies.

    Proxies are mapped to milliseconds with their own least-squares line
    before the RMSE is taken, so every row is in the same unit.
    """
    if len(archs) < 10:
        raise TooFew("need at least 10 subnets")
    if len(archs) != len(ground_truth_ms):
        raise LengthMismatch("archs and ground truth differ in length")
    truth = np.asarray(ground_truth_ms, dtype=float)
    rows = []
    lut_est = np.array([estimate(lut, calib, a) for a in archs])
    rows.append(ProxyRow("lut", spearman(lut_est, truth), float(np.sqrt(np.mean((lut_est - truth) ** 2)))))
    for name, fn in (("flops", count_flops), ("params", count_params)):
        x = np.array([float(fn(a)) for a in archs])
        try:
            k, e = fit_line(x, truth)
            rmse = float(np.sqrt(np.mean((k * x + e - truth) ** 2)))
        except DegenerateFit:
            rmse = float(np.std(truth))
        rows.append(ProxyRow(name, spearman(x, truth), rmse))
    return rows


def scatter_rows(archs, lut, calib, truth) -> list[dict]:
    """Per-subnet (estimate, truth) rows for external plotting."""
    return [{"index": i, "lut_raw_ms": estimate_uncalibrated(lut, a), "lut_calibrated_ms": estimate(lut, calib, a),
             "flops": count_flops(a), "params": count_params(a), "truth_ms": float(t)}
            for i, (a, t) in enumerate(zip(archs, truth))]


def load_pairs(path) -> list[tuple[SubnetArch, float]]:
    with open(path) as fh:
        doc = json.load(fh)
    items = doc["pairs"] if isinstance(doc, dict) else doc
    return [(SubnetArch.from_dict(p["subnet"]), float(p["measured_ms"])) for p in items]


def pairs_document(pairs) -> list[dict]:
    return [{"subnet": a.to_dict(), "measured_ms": float(m)} for a, m in pairs]
