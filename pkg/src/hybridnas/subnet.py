"""Concrete subnet architectures and their exact parameter / FLOP accounting.

A :class:`SubnetArch` is stored in its structured form (stem activation, one
:class:`StageArch` per stage, one entry per embedding layer).  The flat,
ordered block list used by the latency tables and the encoder is derived
from it with :meth:`SubnetArch.blocks`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

GELU = "gelu"
RELU = "relu"
FUSED = "fused"
UNIFIED = "unified"

# block kinds
STEM = "stem"
FUSED_FFN = "fused_ffn"
UNIFIED_FFN = "unified_ffn"
MHSA = "mhsa"
EMBED = "embed"
MHSA_DS = "mhsa_ds"
HEAD = "head"

BLOCK_KINDS = (STEM, FUSED_FFN, UNIFIED_FFN, MHSA, EMBED, MHSA_DS, HEAD)
FFN_KIND = {FUSED: FUSED_FFN, UNIFIED: UNIFIED_FFN}

# attention geometry; the value width is N_HEAD * QK_DIM * expansion
N_HEAD = 8
QK_DIM = 16

MAX_BLOCKS = 44


class BlockSpec(NamedTuple):
    """One profileable block instantiation.

    Fields that do not apply to a kind are ``None`` (e.g. the kernel of an
    MHSA block).  ``resolution`` is the side length of the block's output
    feature map.
    """

    kind: str
    in_width: int
    out_width: int
    expansion: Optional[int]
    kernel: Optional[int]
    activation: Optional[str]
    resolution: int


# LUT keys and block specs share one canonical tuple layout.
BlockKey = BlockSpec


@dataclass(frozen=True)
class FFNChoice:
    ffn_type: str
    expansion: int
    kernel: int
    activation: str


@dataclass(frozen=True)
class MHSAChoice:
    expansion: int
    activation: str


@dataclass(frozen=True)
class StageArch:
    """Width, FFN blocks and MHSA placement of one stage.

    ``mhsa[j]`` is the attention block placed directly before ``ffns[j]``, or
    ``None``.  Both tuples always have the same length.
    """

    width: int
    ffns: tuple[FFNChoice, ...]
    mhsa: tuple[Optional[MHSAChoice], ...]

    def __post_init__(self):
        if len(self.ffns) != len(self.mhsa):
            raise ValueError("ffns and mhsa must have equal length")

    @property
    def depth(self) -> int:
        return len(self.ffns)

    @property
    def n_mhsa(self) -> int:
        return sum(m is not None for m in self.mhsa)


@dataclass(frozen=True)
class SubnetArch:
    stem_activation: str
    stages: tuple[StageArch, ...]
    # one entry per embedding layer: None for a plain conv embed,
    # an MHSAChoice for an attention downsampling embed
    embeds: tuple[Optional[MHSAChoice], ...]
    input_resolution: int = 224
    num_classes: int = 1000

    def __post_init__(self):
        if len(self.embeds) != len(self.stages) - 1:
            raise ValueError("need exactly one embed between consecutive stages")

    def stage_resolution(self, i: int) -> int:
        return self.input_resolution // 4 // (2**i)

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(s.width for s in self.stages)

    @property
    def depths(self) -> tuple[int, ...]:
        return tuple(s.depth for s in self.stages)

    @property
    def n_mhsa(self) -> int:
        return sum(s.n_mhsa for s in self.stages)

    def blocks(self) -> list[BlockSpec]:
        out = []
        for i, stage in enumerate(self.stages):
            res = self.stage_resolution(i)
            c = stage.width
            if i == 0:
                out.append(BlockSpec(STEM, 3, c, None, 3, self.stem_activation, res))
            else:
                prev = self.stages[i - 1].width
                emb = self.embeds[i - 1]
                if emb is None:
                    out.append(BlockSpec(EMBED, prev, c, None, 3, None, res))
                else:
                    out.append(BlockSpec(MHSA_DS, prev, c, emb.expansion, None, emb.activation, res))
            for m, f in zip(stage.mhsa, stage.ffns):
                if m is not None:
                    out.append(BlockSpec(MHSA, c, c, m.expansion, None, m.activation, res))
                out.append(BlockSpec(FFN_KIND[f.ffn_type], c, c, f.expansion, f.kernel, f.activation, res))
        last = len(self.stages) - 1
        out.append(BlockSpec(HEAD, self.stages[-1].width, self.num_classes, None, None, None,
                             self.stage_resolution(last)))
        return out

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        def mh(m):
            return None if m is None else {"expansion": m.expansion, "activation": m.activation}

        return {
            "input_resolution": self.input_resolution,
            "num_classes": self.num_classes,
            "stem_activation": self.stem_activation,
            "widths": list(self.widths),
            "embeds": [mh(e) for e in self.embeds],
            "stages": [
                {
                    "width": s.width,
                    "blocks": [
                        {"mhsa": mh(m), "ffn": {"type": f.ffn_type, "expansion": f.expansion,
                                                "kernel": f.kernel, "activation": f.activation}}
                        for m, f in zip(s.mhsa, s.ffns)
                    ],
                }
                for s in self.stages
            ],
            "block_list": [list(b) for b in self.blocks()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SubnetArch":
        def mh(m):
            return None if m is None else MHSAChoice(int(m["expansion"]), m["activation"])

        stages = []
        for s in d["stages"]:
            ffns = tuple(FFNChoice(b["ffn"]["type"], int(b["ffn"]["expansion"]),
                                   int(b["ffn"]["kernel"]), b["ffn"]["activation"])
                         for b in s["blocks"])
            stages.append(StageArch(int(s["width"]), ffns, tuple(mh(b.get("mhsa")) for b in s["blocks"])))
        return cls(
            stem_activation=d["stem_activation"],
            stages=tuple(stages),
            embeds=tuple(mh(e) for e in d["embeds"]),
            input_resolution=int(d.get("input_resolution", 224)),
            num_classes=int(d.get("num_classes", 1000)),
        )


# -- accounting ------------------------------------------------------------

def _conv_params(k, cin, cout, groups=1):
    return k * k * (cin // groups) * cout + cout


def _mhsa_params(c, e, n_head, qk_dim):
    d = n_head * qk_dim
    dv = d * e
    return 2 * (c * d + d) + (c * dv + dv) + (dv * c + c)


def _mhsa_macs(c, e, res, n_head, qk_dim):
    d = n_head * qk_dim
    dv = d * e
    n = res * res
    proj = n * (2 * c * d + c * dv + dv * c)
    attn = n * n * d + n * n * dv
    return proj + attn


def block_params(b: BlockSpec, n_head: int = N_HEAD, qk_dim: int = QK_DIM) -> int:
    """Weights plus biases of one block (normalization layers excluded)."""
    if b.kind == STEM:
        mid = b.out_width // 2
        return _conv_params(3, b.in_width, mid) + _conv_params(3, mid, b.out_width)
    if b.kind == EMBED:
        return _conv_params(3, b.in_width, b.out_width)
    if b.kind == UNIFIED_FFN:
        c, h = b.in_width, b.in_width * b.expansion
        return _conv_params(1, c, h) + _conv_params(b.kernel, h, h, groups=h) + _conv_params(1, h, c)
    if b.kind == FUSED_FFN:
        c, h = b.in_width, b.in_width * b.expansion
        return _conv_params(b.kernel, c, h) + _conv_params(1, h, c)
    if b.kind == MHSA:
        return _mhsa_params(b.in_width, b.expansion, n_head, qk_dim)
    if b.kind == MHSA_DS:
        return _conv_params(3, b.in_width, b.out_width) + _mhsa_params(b.out_width, b.expansion, n_head, qk_dim)
    if b.kind == HEAD:
        return b.in_width * b.out_width + b.out_width
    raise ValueError(f"unknown block kind {b.kind!r}")


def block_macs(b: BlockSpec, n_head: int = N_HEAD, qk_dim: int = QK_DIM) -> int:
    hw = b.resolution * b.resolution
    if b.kind == STEM:
        mid = b.out_width // 2
        return 9 * b.in_width * mid * (4 * hw) + 9 * mid * b.out_width * hw
    if b.kind == EMBED:
        return 9 * b.in_width * b.out_width * hw
    if b.kind == UNIFIED_FFN:
        c, h = b.in_width, b.in_width * b.expansion
        return hw * (c * h + b.kernel**2 * h + h * c)
    if b.kind == FUSED_FFN:
        c, h = b.in_width, b.in_width * b.expansion
        return hw * (b.kernel**2 * c * h + h * c)
    if b.kind == MHSA:
        return _mhsa_macs(b.in_width, b.expansion, b.resolution, n_head, qk_dim)
    if b.kind == MHSA_DS:
        return (9 * b.in_width * b.out_width * hw
                + _mhsa_macs(b.out_width, b.expansion, b.resolution, n_head, qk_dim))
    if b.kind == HEAD:
        return b.in_width * b.out_width
    raise ValueError(f"unknown block kind {b.kind!r}")


def block_flops(b: BlockSpec, n_head: int = N_HEAD, qk_dim: int = QK_DIM) -> int:
    return 2 * block_macs(b, n_head, qk_dim)


def count_params(arch: SubnetArch, n_head: int = N_HEAD, qk_dim: int = QK_DIM) -> int:
    return sum(block_params(b, n_head, qk_dim) for b in arch.blocks())


def count_flops(arch: SubnetArch, input_resolution: Optional[int] = None,
                n_head: int = N_HEAD, qk_dim: int = QK_DIM) -> int:
    """FLOPs as 2 x multiply-accumulates; bias, norm and activation ops ignored."""
    if input_resolution is not None and input_resolution != arch.input_resolution:
        arch = replace(arch, input_resolution=input_resolution)
    return sum(block_flops(b, n_head, qk_dim) for b in arch.blocks())
