"""Synthetic ground truth: device latency profiles, an accuracy function and
exhaustive search over small spaces.

Device profiles turn a block into a handful of primitive operators and cost
each one with a roofline-style sum of compute, memory traffic, a fixed
launch overhead and an activation term.  They are meant to reproduce the
*ordering* behaviour of CPU, GPU and VPU-class targets, not absolute numbers.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, NamedTuple, Optional

import numpy as np

from .space import SearchSpace, enumerate_lut_blocks, enumerate_subnets
from .subnet import (
    EMBED, FUSED, FUSED_FFN, GELU, HEAD, MHSA, MHSA_DS, N_HEAD, QK_DIM, RELU, STEM, UNIFIED,
    UNIFIED_FFN, BlockKey, FFNChoice, MHSAChoice, StageArch, SubnetArch,
)

BYTES = 4  # fp32 tensors


class Op(NamedTuple):
    kind: str  # "conv", "dw", "matmul" or "attn"
    macs: int
    bytes: int
    act_elems: int  # elements passed through the activation that follows, 0 if none
    activation: Optional[str]


def _conv(cin, cout, k, res_out, act=None, groups=1, res_in=None):
    res_in = res_in or res_out
    macs = k * k * (cin // groups) * cout * res_out * res_out
    traffic = (cin * res_in * res_in + cout * res_out * res_out + k * k * (cin // groups) * cout) * BYTES
    return Op("dw" if groups > 1 else "conv", macs, traffic, cout * res_out * res_out if act else 0, act)


def _attention(c, e, res, act, n_head=N_HEAD, qk_dim=QK_DIM):
    d = n_head * qk_dim
    dv = d * e
    n = res * res
    qkv = _conv(c, 2 * d + dv, 1, res)
    scores = Op("attn", n * n * d + n * n * dv, (2 * n * n * n_head + n * (2 * d + 2 * dv)) * BYTES, 0, None)
    proj_in = Op("matmul", 0, 0, dv * n, act)  # activation before the output projection
    proj = _conv(dv, c, 1, res)
    return [qkv, scores, proj_in, proj]


def block_ops(b: BlockKey) -> list[Op]:
    """Primitive operators of one block, in execution order."""
    r = b.resolution
    if b.kind == STEM:
        mid = b.out_width // 2
        return [_conv(b.in_width, mid, 3, 2 * r, b.activation, res_in=4 * r),
                _conv(mid, b.out_width, 3, r, b.activation, res_in=2 * r)]
    if b.kind == EMBED:
        return [_conv(b.in_width, b.out_width, 3, r, res_in=2 * r)]
    if b.kind == UNIFIED_FFN:
        h = b.in_width * b.expansion
        return [_conv(b.in_width, h, 1, r, b.activation),
                _conv(h, h, b.kernel, r, b.activation, groups=h),
                _conv(h, b.in_width, 1, r)]
    if b.kind == FUSED_FFN:
        h = b.in_width * b.expansion
        return [_conv(b.in_width, h, b.kernel, r, b.activation), _conv(h, b.in_width, 1, r)]
    if b.kind == MHSA:
        return _attention(b.in_width, b.expansion, r, b.activation)
    if b.kind == MHSA_DS:
        return [_conv(b.in_width, b.out_width, 3, r, res_in=2 * r)] + _attention(
            b.out_width, b.expansion, r, b.activation)
    if b.kind == HEAD:
        return [Op("matmul", b.in_width * b.out_width,
                   (b.in_width + b.out_width + b.in_width * b.out_width) * BYTES, 0, None)]
    raise ValueError(f"unknown block kind {b.kind!r}")


@dataclass(frozen=True)
class DeviceProfile:
    """Cost coefficients of a synthetic device (milliseconds)."""

    name: str
    compute_ms_per_mac: float
    memory_ms_per_byte: float
    overhead_ms: float
    activation_ms_per_elem: float
    gelu_penalty: float = 1.0
    depthwise_factor: float = 1.0
    attention_factor: float = 1.0
    kind_scale: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, v in asdict(self).items():
            if isinstance(v, float) and v < 0:
                raise ValueError(f"{k} must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceProfile":
        return cls(**d)

    def scaled(self, **changes) -> "DeviceProfile":
        d = asdict(self)
        d.update(changes)
        return DeviceProfile(**d)


def op_latency(op: Op, profile: DeviceProfile) -> float:
    factor = {"dw": profile.depthwise_factor, "attn": profile.attention_factor}.get(op.kind, 1.0)
    ms = profile.compute_ms_per_mac * op.macs * factor + profile.memory_ms_per_byte * op.bytes
    if op.macs or op.bytes:
        ms += profile.overhead_ms
    if op.act_elems:
        pen = profile.gelu_penalty if op.activation == GELU else 1.0
        ms += profile.activation_ms_per_elem * op.act_elems * pen
    return ms


def synthetic_block_latency(block: BlockKey, profile: DeviceProfile) -> float:
    ms = sum(op_latency(op, profile) for op in block_ops(block))
    return ms * profile.kind_scale.get(block.kind, 1.0)


def synthetic_latency(arch: SubnetArch, profile: DeviceProfile) -> float:
    """Sum of block latencies; what a perfect, uncalibrated LUT would report."""
    return sum(synthetic_block_latency(b, profile) for b in arch.blocks())


def make_standard_profiles() -> dict[str, DeviceProfile]:
    """CPU-, GPU- and VPU-like profiles.

    Coefficients come from a bounded random search (then rounded) so that
    the five variants of :func:`s0_variants` rank in the same order as
    published measurements on an ARM Cortex-A57 (CPU), a Jetson Nano with
    TensorRT (GPU) and an NCS2 (VPU).  Only the orderings are targeted.
    """
    return {
        # slow depthwise kernels and a scalar GELU; attention moderately costly
        "cpu_like": DeviceProfile("cpu_like", compute_ms_per_mac=1.2e-7, memory_ms_per_byte=4.7e-8,
                                  overhead_ms=0.045, activation_ms_per_elem=3.4e-6, gelu_penalty=7.4,
                                  depthwise_factor=8.5, attention_factor=4.7),
        # fast dense compute, attention is the bottleneck
        "gpu_like": DeviceProfile("gpu_like", compute_ms_per_mac=9.2e-9, memory_ms_per_byte=7.0e-10,
                                  overhead_ms=0.085, activation_ms_per_elem=3.7e-7, gelu_penalty=3.2,
                                  depthwise_factor=1.1, attention_factor=17.0),
        # accelerator: large per-op overhead, GELU and attention poorly supported
        "vpu_like": DeviceProfile("vpu_like", compute_ms_per_mac=2.5e-9, memory_ms_per_byte=4.2e-9,
                                  overhead_ms=0.39, activation_ms_per_elem=1.4e-7, gelu_penalty=30.0,
                                  depthwise_factor=3.6, attention_factor=30.0),
    }


def s0_variants() -> dict[str, SubnetArch]:
    """The five reference small-model variants (FFN type, activation, V ratio).

    Widths (32, 48, 96, 176), depths (2, 2, 6, 4), FFN expansion 4, kernel 3,
    attention in the last two blocks of stages 3 and 4 and in the third
    embedding.
    """
    out = {}
    for ffn, act, v in ((UNIFIED, GELU, 4), (UNIFIED, GELU, 2), (UNIFIED, RELU, 4),
                        (FUSED, GELU, 4), (FUSED, RELU, 4)):
        f = FFNChoice(ffn, 4, 3, act)
        m = MHSAChoice(v, act)
        stages = (
            StageArch(32, (f,) * 2, (None,) * 2),
            StageArch(48, (f,) * 2, (None,) * 2),
            StageArch(96, (f,) * 6, (None,) * 4 + (m,) * 2),
            StageArch(176, (f,) * 4, (None,) * 2 + (m,) * 2),
        )
        out[f"{ffn}/{act}/v{v}"] = SubnetArch(act, stages, (None, None, m))
    return out


# measured end-to-end latency (ms) of the S0 variants per device family
S0_REFERENCE_MS = {
    "cpu_like": {"unified/gelu/v4": 190.3, "unified/gelu/v2": 168.7, "unified/relu/v4": 105.6,
                 "fused/gelu/v4": 237.6, "fused/relu/v4": 187.7},
    "gpu_like": {"unified/gelu/v4": 21.4, "unified/gelu/v2": 18.1, "unified/relu/v4": 18.3,
                 "fused/gelu/v4": 26.2, "fused/relu/v4": 22.3},
    "vpu_like": {"unified/gelu/v4": 47.0, "unified/gelu/v2": 42.1, "unified/relu/v4": 30.6,
                 "fused/gelu/v4": 36.6, "fused/relu/v4": 26.6},
}


def lut_measurements(space: SearchSpace, profile: DeviceProfile) -> list[tuple[BlockKey, float]]:
    """Noise-free block measurements for every LUT key of ``space``."""
    return [(k, synthetic_block_latency(k, profile)) for k in enumerate_lut_blocks(space)]


def end_to_end_latency(arch: SubnetArch, profile: DeviceProfile, kappa: float = 0.8,
                       epsilon: float = 1.5, noise: float = 0.0, seed=None) -> float:
    """Synthetic on-device end-to-end latency: ``kappa * sum + epsilon`` plus noise.

    ``kappa < 1`` models feature maps staying cached between blocks, so a
    plain LUT sum overestimates.  ``noise`` is a relative standard deviation.
    """
    t = kappa * synthetic_latency(arch, profile) + epsilon
    if noise:
        t += np.random.default_rng(seed).normal(0.0, noise * t)
    return float(t)


# -- accuracy ------------------------------------------------------------------

@dataclass(frozen=True)
class AccuracyOracle:
    """Saturating synthetic accuracy over structural capacity terms.

    ``acc = base + span * (1 - exp(-rate * capacity)) + mhsa_gain * mhsa_mass
    + gelu_gain * n_gelu + fused_gain * n_fused + noise``, clipped to [0, 1].
    """

    base: float = 0.55
    span: float = 0.20
    rate: float = 0.012
    mhsa_gain: float = 0.002
    gelu_gain: float = 0.0005
    fused_gain: float = 0.0008
    noise: float = 0.001
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def capacity(arch: SubnetArch) -> float:
    """Width-weighted depth and expansion mass of the FFN blocks."""
    cap = 0.0
    for i, st in enumerate(arch.stages):
        w = st.width / 32.0
        for f in st.ffns:
            cap += w * (0.5 + f.expansion / 4.0) * (1.0 + 0.1 * (f.kernel - 3) / 2)
    return cap


def mhsa_mass(arch: SubnetArch) -> float:
    mass = 0.0
    for st in arch.stages:
        for m in st.mhsa:
            if m is not None:
                mass += 0.5 + m.expansion / 4.0
    for e in arch.embeds:
        if e is not None:
            mass += 0.5 * e.expansion / 4.0
    return mass


def _hash_unit(arch: SubnetArch, seed: int) -> float:
    h = hashlib.blake2b(repr((seed, arch)).encode(), digest_size=8).digest()
    return int.from_bytes(h, "little") / 2**64 * 2.0 - 1.0


def synthetic_accuracy(arch: SubnetArch, oracle: Optional[AccuracyOracle] = None) -> float:
    o = oracle or AccuracyOracle()
    n_gelu = sum(f.activation == GELU for st in arch.stages for f in st.ffns)
    n_gelu += sum(m is not None and m.activation == GELU for st in arch.stages for m in st.mhsa)
    n_fused = sum(f.ffn_type == FUSED for st in arch.stages for f in st.ffns)
    acc = (o.base + o.span * (1.0 - math.exp(-o.rate * capacity(arch)))
           + o.mhsa_gain * mhsa_mass(arch) + o.gelu_gain * n_gelu + o.fused_gain * n_fused)
    if o.noise:
        acc += o.noise * _hash_unit(arch, o.seed)
    return min(1.0, max(0.0, acc))


class OracleScorer:
    """Adapter exposing the accuracy oracle through a ``predict(arch)`` method."""

    def __init__(self, oracle: Optional[AccuracyOracle] = None):
        self.oracle = oracle or AccuracyOracle()

    def predict(self, arch: SubnetArch) -> float:
        return synthetic_accuracy(arch, self.oracle)


# -- brute force ---------------------------------------------------------------

@dataclass
class BruteForceResult:
    best: Optional[SubnetArch]
    best_value: Optional[float]
    feasible: int
    scanned: int
    min_latency: Optional[float]


def brute_force_best(space: SearchSpace, objective: Callable[[SubnetArch], float],
                     constraints: Iterable = (), cap: int = 10**6,
                     latency: Optional[Callable[[SubnetArch], float]] = None) -> BruteForceResult:
    """Exhaustive constrained argmax over ``space``.

    ``constraints`` is a sequence of ``(metric_fn, bound)`` pairs checked with a
    strict ``<``.  ``latency``, when given, is tracked to report the minimum
    over all subnets (feasible or not).  Ties keep the first subnet in
    enumeration order.
    """
    constraints = list(constraints)
    best, best_v, feasible, scanned, min_lat = None, None, 0, 0, None
    for arch in enumerate_subnets(space, cap):
        scanned += 1
        if latency is not None:
            lat = latency(arch)
            min_lat = lat if min_lat is None else min(min_lat, lat)
        if all(fn(arch) < bound for fn, bound in constraints):
            feasible += 1
            v = objective(arch)
            if best_v is None or v > best_v:
                best, best_v = arch, v
    return BruteForceResult(best, best_v, feasible, scanned, min_lat)



def synthetic_device(space: SearchSpace, profile: DeviceProfile, n_calib: int = 10, seed: int = 0,
                     kappa: float = 0.8, epsilon: float = 1.5, noise: float = 0.0):
    """LUT plus calibration for a synthetic device, built through the real ingestion path."""
    from .latency import build_lut, calibrate
    from .space import init_uniform_distribution, sample_subnet

    lut = build_lut(lut_measurements(space, profile), space, device=profile.name, compiler="synthetic")
    dist = init_uniform_distribution(space)
    archs = [sample_subnet(space, dist, [seed, i]) for i in range(n_calib)]
    pairs = [(a, end_to_end_latency(a, profile, kappa, epsilon, noise, [seed, i, 1]))
             for i, a in enumerate(archs)]
    return lut, calibrate(lut, pairs)
