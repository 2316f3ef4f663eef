"""Fixed-size binary encoding of subnets for the accuracy predictor.

Each block becomes one 24-bit row; rows are stacked in block order and
zero-padded to 44 rows.  Bit layout of a row::

    0-3    stage one-hot
    4-7    input-width index one-hot
    8-11   output-width index one-hot
    12-14  FFN expansion one-hot
    15-17  MHSA value-expansion one-hot
    18-19  FFN type one-hot
    20-21  kernel one-hot
    22-23  activation one-hot

Fields that do not apply to a block kind stay zero.  Width, expansion and
activation indices refer to the owning stage's (or embed's) option lists.
An attention-downsampling embed is told apart from a plain MHSA block by
being the first row of its stage.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .space import CONV, SearchSpace, build_default_space, validate
from .subnet import MAX_BLOCKS, FFNChoice, MHSAChoice, StageArch, SubnetArch

ROW_BITS = 24
FIELDS = {
    "stage": (0, 4),
    "in_width": (4, 4),
    "out_width": (8, 4),
    "ffn_expansion": (12, 3),
    "mhsa_expansion": (15, 3),
    "ffn_type": (18, 2),
    "kernel": (20, 2),
    "activation": (22, 2),
}


class TooManyBlocks(ValueError):
    pass


class MalformedEncoding(ValueError):
    pass


def _set(row, fname, idx):
    start, width = FIELDS[fname]
    if not 0 <= idx < width:
        raise ValueError(f"index {idx} does not fit the {width}-bit {fname} field")
    row[start + idx] = 1


def encode(arch: SubnetArch, space: Optional[SearchSpace] = None) -> np.ndarray:
    """Encode ``arch`` as a ``(44, 24)`` uint8 matrix."""
    space = space or build_default_space()
    blocks = arch.blocks()
    if len(blocks) > MAX_BLOCKS:
        raise TooManyBlocks(f"{len(blocks)} blocks exceed the {MAX_BLOCKS}-row encoding")
    enc = np.zeros((MAX_BLOCKS, ROW_BITS), dtype=np.uint8)
    r = 0

    def row():
        nonlocal r
        r += 1
        return enc[r - 1]

    st0 = space.stages[0]
    x = row()
    _set(x, "stage", 0)
    _set(x, "out_width", st0.widths.index(arch.stages[0].width))
    _set(x, "activation", space.stem_activations.index(arch.stem_activation))
    for i, (st, sa) in enumerate(zip(space.stages, arch.stages)):
        w = st.widths.index(sa.width)
        if i > 0:
            prev = space.stages[i - 1]
            emb_space, emb = space.embeds[i - 1], arch.embeds[i - 1]
            x = row()
            _set(x, "stage", i)
            _set(x, "in_width", prev.widths.index(arch.stages[i - 1].width))
            _set(x, "out_width", w)
            if emb is not None:
                _set(x, "mhsa_expansion", emb_space.expansions.index(emb.expansion))
                _set(x, "activation", emb_space.activations.index(emb.activation))
        for m, f in zip(sa.mhsa, sa.ffns):
            if m is not None:
                x = row()
                _set(x, "stage", i)
                _set(x, "in_width", w)
                _set(x, "out_width", w)
                _set(x, "mhsa_expansion", st.mhsa_expansions.index(m.expansion))
                _set(x, "activation", st.mhsa_activations.index(m.activation))
            x = row()
            _set(x, "stage", i)
            _set(x, "in_width", w)
            _set(x, "out_width", w)
            _set(x, "ffn_expansion", st.expansions.index(f.expansion))
            _set(x, "ffn_type", st.ffn_types.index(f.ffn_type))
            _set(x, "kernel", st.kernels.index(f.kernel))
            _set(x, "activation", st.activations.index(f.activation))
    last = len(space.stages) - 1
    x = row()
    _set(x, "stage", last)
    _set(x, "in_width", space.stages[last].widths.index(arch.stages[last].width))
    return enc


def _fields(row: np.ndarray) -> dict:
    out = {}
    for name, (start, width) in FIELDS.items():
        hot = np.flatnonzero(row[start:start + width])
        if len(hot) > 1:
            raise MalformedEncoding(f"multiple bits set in {name} field")
        out[name] = int(hot[0]) if len(hot) else None
    return out


def decode(enc: np.ndarray, space: Optional[SearchSpace] = None) -> SubnetArch:
    """Inverse of :func:`encode`; raises :class:`MalformedEncoding`."""
    space = space or build_default_space()
    enc = np.asarray(enc)
    if enc.shape != (MAX_BLOCKS, ROW_BITS):
        raise MalformedEncoding(f"expected shape {(MAX_BLOCKS, ROW_BITS)}, got {enc.shape}")
    if not np.isin(enc, (0, 1)).all():
        raise MalformedEncoding("entries must be 0 or 1")
    used = int(np.argmin(enc.any(axis=1))) if not enc.any(axis=1).all() else MAX_BLOCKS
    if enc[used:].any():
        raise MalformedEncoding("non-zero row after padding")
    rows = [_fields(enc[i]) for i in range(used)]
    if not rows:
        raise MalformedEncoding("no stem row")

    def only(f, *names):
        return all((f[k] is not None) == (k in names) for k in FIELDS)

    try:
        return _decode_rows(rows, space, only)
    except (IndexError, KeyError, TypeError) as exc:
        raise MalformedEncoding(f"field index outside the space: {exc}") from None


def _decode_rows(rows, space, only):
    n_stages = len(space.stages)
    f = rows[0]
    if not (only(f, "stage", "out_width", "activation") and f["stage"] == 0):
        raise MalformedEncoding("first row is not a stem")
    stem_act = space.stem_activations[f["activation"]]
    widths = [space.stages[0].widths[f["out_width"]]]
    embeds = []
    ffns: list[list] = [[]]
    mhsa: list[list] = [[]]
    pending: Optional[MHSAChoice] = None
    cur = 0
    saw_head = False
    for f in rows[1:]:
        if saw_head:
            raise MalformedEncoding("rows after the output head")
        s = f["stage"]
        if s is None:
            raise MalformedEncoding("row without a stage")
        if s == cur + 1:
            # first row of a new stage must be its embed
            if pending is not None:
                raise MalformedEncoding("MHSA block without a following FFN")
            emb_space = space.embeds[cur]
            if space.stages[cur].widths[f["in_width"]] != widths[cur]:
                raise MalformedEncoding("embed input width does not match previous stage")
            if emb_space.kind == CONV:
                if not only(f, "stage", "in_width", "out_width"):
                    raise MalformedEncoding("malformed conv embed row")
                embeds.append(None)
            else:
                if not only(f, "stage", "in_width", "out_width", "mhsa_expansion", "activation"):
                    raise MalformedEncoding("malformed downsampling row")
                embeds.append(MHSAChoice(emb_space.expansions[f["mhsa_expansion"]],
                                         emb_space.activations[f["activation"]]))
            cur = s
            widths.append(space.stages[cur].widths[f["out_width"]])
            ffns.append([])
            mhsa.append([])
            continue
        if s != cur:
            raise MalformedEncoding(f"stage jumps from {cur} to {s}")
        st = space.stages[cur]
        if only(f, "stage", "in_width"):
            if cur != n_stages - 1 or pending is not None:
                raise MalformedEncoding("misplaced output head")
            if st.widths[f["in_width"]] != widths[cur]:
                raise MalformedEncoding("head width does not match last stage")
            saw_head = True
            continue
        if f["in_width"] != f["out_width"] or st.widths[f["in_width"]] != widths[cur]:
            raise MalformedEncoding("block width does not match its stage")
        if only(f, "stage", "in_width", "out_width", "mhsa_expansion", "activation"):
            if pending is not None:
                raise MalformedEncoding("two consecutive MHSA blocks")
            pending = MHSAChoice(st.mhsa_expansions[f["mhsa_expansion"]],
                                 st.mhsa_activations[f["activation"]])
        elif only(f, "stage", "in_width", "out_width", "ffn_expansion", "ffn_type", "kernel", "activation"):
            ffns[cur].append(FFNChoice(st.ffn_types[f["ffn_type"]], st.expansions[f["ffn_expansion"]],
                                       st.kernels[f["kernel"]], st.activations[f["activation"]]))
            mhsa[cur].append(pending)
            pending = None
        else:
            raise MalformedEncoding("row matches no block kind")
    if not saw_head:
        raise MalformedEncoding("missing output head row")
    if cur != n_stages - 1:
        raise MalformedEncoding(f"only {cur + 1} of {n_stages} stages present")
    arch = SubnetArch(stem_act, tuple(StageArch(w, tuple(fs), tuple(ms))
                                      for w, fs, ms in zip(widths, ffns, mhsa)),
                      tuple(embeds), space.input_resolution, space.num_classes)
    errs = validate(space, arch)
    if errs:
        raise MalformedEncoding("; ".join(errs))
    return arch


def to_bitstring(enc: np.ndarray) -> str:
    """Flat '0'/'1' string, rows concatenated."""
    return "".join("1" if b else "0" for b in np.asarray(enc).ravel())


def from_bitstring(bits: str) -> np.ndarray:
    arr = np.frombuffer(bits.encode(), dtype=np.uint8) - ord("0")
    return arr.reshape(MAX_BLOCKS, ROW_BITS).astype(np.uint8)
