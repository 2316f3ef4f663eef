"""Hybrid CNN/attention search space: definition, exact counting, enumeration,
LUT block census and sampling under per-stage categorical distributions."""

from __future__ import annotations

import bisect
import functools
import itertools
import json
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

import numpy as np

from .subnet import (
    EMBED, FFN_KIND, FUSED, GELU, HEAD, MHSA, MHSA_DS, RELU, STEM, UNIFIED,
    BlockKey, FFNChoice, MHSAChoice, StageArch, SubnetArch,
)

CONV = "conv"


class SpaceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class StageSpace:
    widths: tuple[int, ...]
    depths: tuple[int, ...]
    ffn_types: tuple[str, ...] = (FUSED, UNIFIED)
    expansions: tuple[int, ...] = (2, 3, 4)
    kernels: tuple[int, ...] = (3, 5)
    activations: tuple[str, ...] = (GELU, RELU)
    mhsa_allowed: bool = False
    mhsa_expansions: tuple[int, ...] = (2, 3, 4)
    mhsa_activations: tuple[str, ...] = (GELU, RELU)

    def __post_init__(self):
        for name in ("widths", "depths", "ffn_types", "expansions", "kernels", "activations"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be non-empty")
        if self.mhsa_allowed and not (self.mhsa_expansions and self.mhsa_activations):
            raise ValueError("mhsa choices must be non-empty when mhsa is allowed")
        if any(b <= a for a, b in zip(self.widths, self.widths[1:])):
            raise ValueError("widths must be strictly increasing")
        if any(b <= a for a, b in zip(self.depths, self.depths[1:])):
            raise ValueError("depths must be strictly increasing")

    def ffn_choices(self) -> list[FFNChoice]:
        return [FFNChoice(t, e, k, a) for t in self.ffn_types for e in self.expansions
                for k in self.kernels for a in self.activations]

    def mhsa_choices(self) -> list[MHSAChoice]:
        if not self.mhsa_allowed:
            return []
        return [MHSAChoice(e, a) for e in self.mhsa_expansions for a in self.mhsa_activations]


@dataclass(frozen=True)
class EmbedSpace:
    kind: str = CONV  # CONV or MHSA_DS
    expansions: tuple[int, ...] = ()
    activations: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (CONV, MHSA_DS):
            raise ValueError(f"unknown embed kind {self.kind!r}")
        if self.kind == MHSA_DS and not (self.expansions and self.activations):
            raise ValueError("attention downsampling needs expansion and activation choices")

    def choices(self) -> list[Optional[MHSAChoice]]:
        if self.kind == CONV:
            return [None]
        return [MHSAChoice(e, a) for e in self.expansions for a in self.activations]


@dataclass(frozen=True)
class SearchSpace:
    stages: tuple[StageSpace, ...]
    embeds: tuple[EmbedSpace, ...]
    stem_activations: tuple[str, ...] = (GELU, RELU)
    input_resolution: int = 224
    num_classes: int = 1000

    def __post_init__(self):
        if not self.stages:
            raise ValueError("a space needs at least one stage")
        if len(self.embeds) != len(self.stages) - 1:
            raise ValueError("need exactly one embed between consecutive stages")
        if not self.stem_activations:
            raise ValueError("stem_activations must be non-empty")

    def stage_resolution(self, i: int) -> int:
        return self.input_resolution // 4 // (2**i)

    # -- JSON --------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "input_resolution": self.input_resolution,
            "num_classes": self.num_classes,
            "stem_activations": list(self.stem_activations),
            "stages": [
                {
                    "width_choices": list(s.widths),
                    "depths": list(s.depths),
                    "ffn_types": list(s.ffn_types),
                    "expansions": list(s.expansions),
                    "kernels": list(s.kernels),
                    "activations": list(s.activations),
                    "mhsa": s.mhsa_allowed,
                    "mhsa_expansions": list(s.mhsa_expansions),
                    "mhsa_activations": list(s.mhsa_activations),
                }
                for s in self.stages
            ],
            "embeds": [
                {"kind": e.kind, "expansions": list(e.expansions), "activations": list(e.activations)}
                for e in self.embeds
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpace":
        """Build a space from a JSON-style document.

        Any omitted field falls back to the default (full) space.  Widths may
        be given as a ``[min, max, step]`` triple under ``"widths"`` or as an
        explicit list under ``"width_choices"``.
        """
        default = build_default_space()
        stage_docs = d.get("stages", [{} for _ in default.stages])
        stages = []
        for i, sd in enumerate(stage_docs):
            base = default.stages[min(i, len(default.stages) - 1)]
            if "width_choices" in sd:
                widths = tuple(int(w) for w in sd["width_choices"])
            elif "widths" in sd:
                widths = width_range(*sd["widths"])
            else:
                widths = base.widths
            mh = bool(sd.get("mhsa", base.mhsa_allowed))
            stages.append(StageSpace(
                widths=widths,
                depths=tuple(int(x) for x in sd.get("depths", base.depths)),
                ffn_types=tuple(sd.get("ffn_types", base.ffn_types)),
                expansions=tuple(int(x) for x in sd.get("expansions", base.expansions)),
                kernels=tuple(int(x) for x in sd.get("kernels", base.kernels)),
                activations=tuple(sd.get("activations", base.activations)),
                mhsa_allowed=mh,
                mhsa_expansions=tuple(int(x) for x in sd.get("mhsa_expansions", base.mhsa_expansions)),
                mhsa_activations=tuple(sd.get("mhsa_activations", base.mhsa_activations)),
            ))
        if "embeds" in d:
            embeds = tuple(
                EmbedSpace(e.get("kind", CONV), tuple(int(x) for x in e.get("expansions", ())),
                           tuple(e.get("activations", ())))
                for e in d["embeds"]
            )
        elif len(stages) == len(default.stages):
            embeds = default.embeds
        else:
            embeds = tuple(EmbedSpace() for _ in stages[1:])
        return cls(
            stages=tuple(stages),
            embeds=embeds,
            stem_activations=tuple(d.get("stem_activations", default.stem_activations)),
            input_resolution=int(d.get("input_resolution", default.input_resolution)),
            num_classes=int(d.get("num_classes", default.num_classes)),
        )

    @classmethod
    def from_json(cls, path) -> "SearchSpace":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def width_range(lo: int, hi: int, step: int) -> tuple[int, ...]:
    """Inclusive ``(min, max, step)`` channel range, e.g. ``(24, 36, 4)``."""
    return tuple(range(int(lo), int(hi) + 1, int(step)))


def build_default_space() -> SearchSpace:
    """The full four-stage hybrid space."""
    ds = EmbedSpace(MHSA_DS, (2, 3, 4), (GELU, RELU))
    return SearchSpace(
        stages=(
            StageSpace(width_range(24, 36, 4), (2, 3)),
            StageSpace(width_range(40, 64, 8), (2, 3)),
            StageSpace(width_range(96, 132, 12), (6, 7, 8, 9), mhsa_allowed=True),
            StageSpace(width_range(176, 248, 24), (4, 5, 6), mhsa_allowed=True),
        ),
        embeds=(EmbedSpace(), EmbedSpace(), ds),
        stem_activations=(GELU, RELU),
    )


# -- counting and enumeration ------------------------------------------------

def count_subnets(space: SearchSpace) -> int:
    total = len(space.stem_activations)
    for st in space.stages:
        per_block = len(st.ffn_types) * len(st.expansions) * len(st.kernels) * len(st.activations)
        if st.mhsa_allowed:
            # sum_m C(n, m) M^m = (1 + M)^n over the MHSA placements
            per_block *= 1 + len(st.mhsa_expansions) * len(st.mhsa_activations)
        total *= len(st.widths) * sum(per_block**n for n in st.depths)
    for emb in space.embeds:
        total *= len(emb.choices())
    return total


def _stage_options(st: StageSpace) -> Iterator[StageArch]:
    slot = list(itertools.product([None] + st.mhsa_choices(), st.ffn_choices()))
    for w in st.widths:
        for n in st.depths:
            for combo in itertools.product(slot, repeat=n):
                yield StageArch(w, tuple(f for _, f in combo), tuple(m for m, _ in combo))


def enumerate_subnets(space: SearchSpace, cap: int) -> Iterator[SubnetArch]:
    """Yield every subnet once, stem first, then stages and embeds in order."""
    n = count_subnets(space)
    if n > cap:
        raise SpaceTooLarge(f"space has {n} subnets, cap is {cap}")
    return _enumerate(space)


def _enumerate(space):
    parts = [list(space.stem_activations)]
    for i, st in enumerate(space.stages):
        if i > 0:
            parts.append(space.embeds[i - 1].choices())
        parts.append(list(_stage_options(st)))
    for combo in itertools.product(*parts):
        stem, stages, embeds = combo[0], [combo[1]], []
        for j in range(2, len(combo), 2):
            embeds.append(combo[j])
            stages.append(combo[j + 1])
        yield SubnetArch(stem, tuple(stages), tuple(embeds), space.input_resolution, space.num_classes)


def lut_rows(space: SearchSpace) -> list[tuple[str, list[BlockKey]]]:
    """Profileable blocks grouped like the rows of the search-space table.

    The output head rows are listed last under ``"head"``.
    """
    rows = []
    c1 = space.stages[0].widths
    r0 = space.stage_resolution(0)
    rows.append(("stem", [BlockKey(STEM, 3, w, None, 3, a, r0)
                          for w in c1 for a in space.stem_activations]))
    for i, st in enumerate(space.stages):
        res = space.stage_resolution(i)
        tag = f"stage{i + 1}"
        if i > 0:
            emb = space.embeds[i - 1]
            prev = space.stages[i - 1].widths
            if emb.kind == CONV:
                keys = [BlockKey(EMBED, p, w, None, 3, None, res) for p in prev for w in st.widths]
            else:
                keys = [BlockKey(MHSA_DS, p, w, e, None, a, res) for p in prev for w in st.widths
                        for e in emb.expansions for a in emb.activations]
            rows.append((f"embed{i}", keys))
        if st.mhsa_allowed:
            rows.append((f"{tag}.mhsa", [BlockKey(MHSA, w, w, e, None, a, res) for w in st.widths
                                         for e in st.mhsa_expansions for a in st.mhsa_activations]))
        rows.append((f"{tag}.ffn", [BlockKey(FFN_KIND[f.ffn_type], w, w, f.expansion, f.kernel,
                                             f.activation, res)
                                    for w in st.widths for f in st.ffn_choices()]))
    last = len(space.stages) - 1
    rows.append(("head", [BlockKey(HEAD, w, space.num_classes, None, None, None,
                                   space.stage_resolution(last))
                          for w in space.stages[-1].widths]))
    return rows


def enumerate_lut_blocks(space: SearchSpace, include_head: bool = True) -> list[BlockKey]:
    keys = []
    for name, row in lut_rows(space):
        if name == "head" and not include_head:
            continue
        keys.extend(row)
    return keys


# -- sampling distributions --------------------------------------------------

def dimensions(space: SearchSpace) -> dict[str, tuple]:
    """Every evolvable categorical dimension and its ordered support."""
    return dict(_dimensions(space))


@functools.lru_cache(maxsize=64)
def _dimensions(space: SearchSpace) -> dict[str, tuple]:
    dims: dict[str, tuple] = {"stem.activation": tuple(space.stem_activations)}
    for i, st in enumerate(space.stages):
        if i > 0 and space.embeds[i - 1].kind == MHSA_DS:
            emb = space.embeds[i - 1]
            dims[f"embed{i}.expansion"] = tuple(emb.expansions)
            dims[f"embed{i}.activation"] = tuple(emb.activations)
        s = f"stage{i + 1}"
        dims[f"{s}.width"] = tuple(st.widths)
        dims[f"{s}.depth"] = tuple(st.depths)
        if st.mhsa_allowed:
            dims[f"{s}.mhsa"] = (False, True)
            dims[f"{s}.mhsa_expansion"] = tuple(st.mhsa_expansions)
            dims[f"{s}.mhsa_activation"] = tuple(st.mhsa_activations)
        dims[f"{s}.ffn_type"] = tuple(st.ffn_types)
        dims[f"{s}.expansion"] = tuple(st.expansions)
        dims[f"{s}.kernel"] = tuple(st.kernels)
        dims[f"{s}.activation"] = tuple(st.activations)
    return dims


@dataclass(frozen=True, eq=False)
class SamplingDistribution:
    """Per-dimension categorical probabilities over a space.

    ``probs[name][i]`` is the probability of ``dimensions(space)[name][i]``.
    Arrays are made read-only on construction.
    """

    space: SearchSpace
    probs: dict[str, np.ndarray]
    _cdf: dict = field(default_factory=dict, repr=False, compare=False)
    _opts: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        dims = dimensions(self.space)
        self._opts.update(dims)
        if set(dims) != set(self.probs):
            raise ValueError("distribution keys do not match the space dimensions")
        for name, opts in dims.items():
            p = np.array(self.probs[name], dtype=float)
            if p.shape != (len(opts),):
                raise ValueError(f"{name}: expected {len(opts)} probabilities, got {p.shape}")
            cdf = np.cumsum(p)
            if p.min() < 0 or abs(cdf[-1] - 1.0) > 1e-9:
                raise ValueError(f"{name}: not a probability vector: {p}")
            p.setflags(write=False)
            self.probs[name] = p
            self._cdf[name] = cdf.tolist()

    def options(self, name):
        return self._opts[name]

    def entropy(self) -> float:
        """Sum of Shannon entropies (nats) over all dimensions."""
        h = 0.0
        for p in self.probs.values():
            nz = p[p > 0]
            h -= float(np.sum(nz * np.log(nz)))
        return h

    def to_dict(self) -> dict:
        dims = dimensions(self.space)
        return {name: {"options": list(dims[name]), "probs": [float(x) for x in p]}
                for name, p in self.probs.items()}

    def draw(self, name: str, rng: np.random.Generator):
        cdf = self._cdf[name]
        idx = bisect.bisect_right(cdf, rng.random() * cdf[-1])
        # guard against float round-off at the top end
        idx = min(idx, len(cdf) - 1)
        while self.probs[name][idx] == 0:
            idx -= 1
        return self._opts[name][idx]


def init_uniform_distribution(space: SearchSpace) -> SamplingDistribution:
    return SamplingDistribution(space, {name: np.full(len(opts), 1.0 / len(opts))
                                        for name, opts in dimensions(space).items()})


def degenerate_distribution(space: SearchSpace, choose: dict) -> SamplingDistribution:
    """Point-mass distribution; ``choose`` maps dimension name to the chosen option.

    Dimensions missing from ``choose`` default to their first option.
    """
    probs = {}
    for name, opts in dimensions(space).items():
        p = np.zeros(len(opts))
        p[opts.index(choose[name]) if name in choose else 0] = 1.0
        probs[name] = p
    return SamplingDistribution(space, probs)


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_ffn(dist: SamplingDistribution, stage: int, rng) -> FFNChoice:
    s = f"stage{stage + 1}"
    return FFNChoice(dist.draw(f"{s}.ffn_type", rng), dist.draw(f"{s}.expansion", rng),
                     dist.draw(f"{s}.kernel", rng), dist.draw(f"{s}.activation", rng))


def sample_mhsa(dist: SamplingDistribution, stage: int, rng) -> MHSAChoice:
    s = f"stage{stage + 1}"
    return MHSAChoice(dist.draw(f"{s}.mhsa_expansion", rng), dist.draw(f"{s}.mhsa_activation", rng))


def sample_embed(dist: SamplingDistribution, embed: int, rng) -> Optional[MHSAChoice]:
    """Sample embed ``embed`` (1-based, entering stage index ``embed``)."""
    if dist.space.embeds[embed - 1].kind == CONV:
        return None
    return MHSAChoice(dist.draw(f"embed{embed}.expansion", rng), dist.draw(f"embed{embed}.activation", rng))


def sample_stage(dist: SamplingDistribution, i: int, rng, width=None, depth=None) -> StageArch:
    s = f"stage{i + 1}"
    st = dist.space.stages[i]
    width = dist.draw(f"{s}.width", rng) if width is None else width
    depth = dist.draw(f"{s}.depth", rng) if depth is None else depth
    if st.mhsa_allowed:
        present = [dist.draw(f"{s}.mhsa", rng) for _ in range(depth)]
    else:
        present = [False] * depth
    mhsa, ffns = [], []
    for has in present:
        mhsa.append(sample_mhsa(dist, i, rng) if has else None)
        ffns.append(sample_ffn(dist, i, rng))
    return StageArch(width, tuple(ffns), tuple(mhsa))


def sample_subnet(space: SearchSpace, dist: SamplingDistribution,
                  rng_seed: Union[int, np.random.Generator, None]) -> SubnetArch:
    """Draw one subnet; deterministic for an integer seed."""
    rng = as_rng(rng_seed)
    stem = dist.draw("stem.activation", rng)
    stages, embeds = [], []
    for i in range(len(space.stages)):
        if i > 0:
            embeds.append(sample_embed(dist, i, rng))
        stages.append(sample_stage(dist, i, rng))
    return SubnetArch(stem, tuple(stages), tuple(embeds), space.input_resolution, space.num_classes)


def _extreme(space: SearchSpace, ffn_type: str, biggest: bool) -> SubnetArch:
    pick = max if biggest else min
    stages, embeds = [], []
    for i, st in enumerate(space.stages):
        if i > 0:
            emb = space.embeds[i - 1]
            embeds.append(None if emb.kind == CONV else MHSAChoice(pick(emb.expansions), emb.activations[0]))
        depth = pick(st.depths)
        f = FFNChoice(ffn_type, pick(st.expansions), pick(st.kernels), st.activations[0])
        m = MHSAChoice(pick(st.mhsa_expansions), st.mhsa_activations[0]) if (biggest and st.mhsa_allowed) else None
        stages.append(StageArch(pick(st.widths), (f,) * depth, (m,) * depth))
    return SubnetArch(space.stem_activations[0], tuple(stages), tuple(embeds),
                      space.input_resolution, space.num_classes)


def max_subnet(space: SearchSpace, ffn_type: Optional[str] = None) -> SubnetArch:
    return _extreme(space, ffn_type or space.stages[0].ffn_types[0], True)


def min_subnet(space: SearchSpace, ffn_type: Optional[str] = None) -> SubnetArch:
    return _extreme(space, ffn_type or space.stages[0].ffn_types[0], False)


def sample_sandwich(space: SearchSpace, rng_seed, M: int = 2) -> dict:
    """Largest, smallest and ``M`` random subnets for one training step.

    The largest and smallest subnets each use a single FFN type drawn once;
    the random ones draw the FFN type per block.
    """
    if M < 0:
        raise ValueError("M must be >= 0")
    rng = as_rng(rng_seed)
    types = space.stages[0].ffn_types
    big_t = types[rng.integers(len(types))]
    small_t = types[rng.integers(len(types))]
    uniform = init_uniform_distribution(space)
    return {
        "max": max_subnet(space, big_t),
        "min": min_subnet(space, small_t),
        "rands": [sample_subnet(space, uniform, rng) for _ in range(M)],
    }


def validate(space: SearchSpace, arch: SubnetArch) -> list[str]:
    """Return a list of human-readable violations; empty means valid."""
    errs = []
    if len(arch.stages) != len(space.stages):
        return [f"expected {len(space.stages)} stages, got {len(arch.stages)}"]
    if len(arch.embeds) != len(space.embeds):
        return [f"expected {len(space.embeds)} embeds, got {len(arch.embeds)}"]
    if arch.input_resolution != space.input_resolution:
        errs.append(f"input resolution {arch.input_resolution} != {space.input_resolution}")
    if arch.stem_activation not in space.stem_activations:
        errs.append(f"stem activation {arch.stem_activation!r} not allowed")
    for i, (st, sa) in enumerate(zip(space.stages, arch.stages)):
        tag = f"stage{i + 1}"
        if sa.width not in st.widths:
            errs.append(f"{tag}: width {sa.width} not in {st.widths}")
        if sa.depth not in st.depths:
            errs.append(f"{tag}: depth {sa.depth} not in {st.depths}")
        if sa.n_mhsa > sa.depth:
            errs.append(f"{tag}: {sa.n_mhsa} MHSA blocks exceed {sa.depth} FFN blocks")
        for j, (m, f) in enumerate(zip(sa.mhsa, sa.ffns)):
            if f.ffn_type not in st.ffn_types:
                errs.append(f"{tag}.block{j}: ffn type {f.ffn_type!r} not allowed")
            if f.expansion not in st.expansions:
                errs.append(f"{tag}.block{j}: expansion {f.expansion} not allowed")
            if f.kernel not in st.kernels:
                errs.append(f"{tag}.block{j}: kernel {f.kernel} not allowed")
            if f.activation not in st.activations:
                errs.append(f"{tag}.block{j}: activation {f.activation!r} not allowed")
            if m is not None:
                if not st.mhsa_allowed:
                    errs.append(f"{tag}.block{j}: MHSA not allowed in this stage")
                else:
                    if m.expansion not in st.mhsa_expansions:
                        errs.append(f"{tag}.block{j}: MHSA expansion {m.expansion} not allowed")
                    if m.activation not in st.mhsa_activations:
                        errs.append(f"{tag}.block{j}: MHSA activation {m.activation!r} not allowed")
    for e, (es, ea) in enumerate(zip(space.embeds, arch.embeds), start=1):
        if es.kind == CONV and ea is not None:
            errs.append(f"embed{e}: expected a conv embed")
        elif es.kind == MHSA_DS:
            if ea is None:
                errs.append(f"embed{e}: expected an attention downsampling embed")
            else:
                if ea.expansion not in es.expansions:
                    errs.append(f"embed{e}: expansion {ea.expansion} not allowed")
                if ea.activation not in es.activations:
                    errs.append(f"embed{e}: activation {ea.activation!r} not allowed")
    return errs


def magnitude(n: int) -> int:
    """Decimal order of magnitude of a positive integer."""
    return len(str(n)) - 1 if n > 0 else 0

