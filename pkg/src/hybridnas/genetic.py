"""Mutation and crossover over structured subnets."""

from __future__ import annotations

from dataclasses import replace

from .space import (
    MHSA_DS, SamplingDistribution, as_rng, sample_mhsa, sample_stage,
)
from .subnet import FFNChoice, MHSAChoice, StageArch, SubnetArch


def _maybe(rng, p, dist, name, current):
    return dist.draw(name, rng) if rng.random() < p else current


def mutate(arch: SubnetArch, dist: SamplingDistribution, p_mut: float, rng_seed) -> SubnetArch:
    """Resample each choice dimension independently with probability ``p_mut``.

    A depth change truncates trailing blocks or appends new ones drawn from
    ``dist``.  Replacement values are always drawn from ``dist``, so the
    result stays inside the distribution's space.
    """
    if not 0.0 <= p_mut <= 1.0:
        raise ValueError("p_mut must lie in [0, 1]")
    rng = as_rng(rng_seed)
    space = dist.space
    stem = _maybe(rng, p_mut, dist, "stem.activation", arch.stem_activation)
    stages, embeds = [], []
    for i, (st, sa) in enumerate(zip(space.stages, arch.stages)):
        s = f"stage{i + 1}"
        if i > 0:
            emb = arch.embeds[i - 1]
            if space.embeds[i - 1].kind == MHSA_DS:
                emb = MHSAChoice(_maybe(rng, p_mut, dist, f"embed{i}.expansion", emb.expansion),
                                 _maybe(rng, p_mut, dist, f"embed{i}.activation", emb.activation))
            embeds.append(emb)
        width = _maybe(rng, p_mut, dist, f"{s}.width", sa.width)
        depth = _maybe(rng, p_mut, dist, f"{s}.depth", sa.depth)
        ffns, mhsa = [], []
        for j in range(min(depth, sa.depth)):
            f = sa.ffns[j]
            ffns.append(FFNChoice(
                _maybe(rng, p_mut, dist, f"{s}.ffn_type", f.ffn_type),
                _maybe(rng, p_mut, dist, f"{s}.expansion", f.expansion),
                _maybe(rng, p_mut, dist, f"{s}.kernel", f.kernel),
                _maybe(rng, p_mut, dist, f"{s}.activation", f.activation),
            ))
            m = sa.mhsa[j]
            if st.mhsa_allowed:
                has = _maybe(rng, p_mut, dist, f"{s}.mhsa", m is not None)
                if not has:
                    m = None
                elif m is None:
                    m = sample_mhsa(dist, i, rng)
                else:
                    m = MHSAChoice(_maybe(rng, p_mut, dist, f"{s}.mhsa_expansion", m.expansion),
                                   _maybe(rng, p_mut, dist, f"{s}.mhsa_activation", m.activation))
            mhsa.append(m)
        if depth > sa.depth:
            extra = sample_stage(dist, i, rng, width=width, depth=depth - sa.depth)
            ffns.extend(extra.ffns)
            mhsa.extend(extra.mhsa)
        stages.append(StageArch(width, tuple(ffns), tuple(mhsa)))
    return replace(arch, stem_activation=stem, stages=tuple(stages), embeds=tuple(embeds))


def crossover(a: SubnetArch, b: SubnetArch, rng_seed) -> SubnetArch:
    """Stage-wise uniform crossover.

    Each stage (width, depth, MHSA placement and all block choices) comes
    from one parent picked with equal probability.  The stem follows the
    first stage's parent and each embed follows the stage it feeds.
    """
    if len(a.stages) != len(b.stages):
        raise ValueError("parents come from different spaces")
    rng = as_rng(rng_seed)
    pick = [a if rng.random() < 0.5 else b for _ in a.stages]
    return replace(
        a,
        stem_activation=pick[0].stem_activation,
        stages=tuple(p.stages[i] for i, p in enumerate(pick)),
        embeds=tuple(pick[i].embeds[i - 1] for i in range(1, len(pick))),
    )

