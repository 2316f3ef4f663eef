"""Experiment drivers shared by the CLI, the demos and the acceptance tests."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .evolution import (
    SearchConfig, acceptance_rate, evolve_under_constraints, make_constraints, search,
)
from .latency import estimate
from .oracle import (
    AccuracyOracle, DeviceProfile, OracleScorer, brute_force_best, make_standard_profiles,
    synthetic_accuracy, synthetic_device,
)
from .space import SearchSpace, build_default_space, init_uniform_distribution, sample_subnet


def desk_space() -> SearchSpace:
    """A 79,872-subnet slice of the default space, small enough to brute-force.

    Keeps both FFN types, two expansions, optional attention in stages 3
    and 4 and the attention-downsampling embed; everything else is pinned.
    """
    relu = ["relu"]
    return SearchSpace.from_dict({
        "stem_activations": relu,
        "stages": [
            {"width_choices": [32], "depths": [1], "expansions": [2, 4], "kernels": [3], "activations": relu},
            {"width_choices": [48], "depths": [1], "expansions": [2, 4], "kernels": [3], "activations": relu},
            {"width_choices": [96, 120], "depths": [1, 2], "expansions": [2, 4], "kernels": [3],
             "activations": relu, "mhsa_expansions": [2, 4], "mhsa_activations": relu},
            {"width_choices": [176], "depths": [1], "expansions": [2, 4], "kernels": [3],
             "activations": relu, "mhsa_expansions": [2], "mhsa_activations": relu},
        ],
        "embeds": [{"kind": "conv"}, {"kind": "conv"},
                   {"kind": "mhsa_ds", "expansions": [2, 4], "activations": relu}],
    })


def latency_quantile(space: SearchSpace, lut, calib, q: float, n: int = 2000, seed: int = 0) -> float:
    """``q``-quantile of calibrated latency under uniform sampling."""
    dist = init_uniform_distribution(space)
    rng = np.random.default_rng(seed)
    lats = [estimate(lut, calib, sample_subnet(space, dist, rng)) for _ in range(n)]
    return float(np.quantile(lats, q))


# -- search optimality ---------------------------------------------------------

@dataclass
class OptimalityTrial:
    seed: int
    bound_ms: float
    optimum: float
    found: float
    ratio: float
    seconds: float


def optimality_trials(seeds: Sequence[int], space: Optional[SearchSpace] = None,
                      profile: Optional[DeviceProfile] = None, quantile: float = 0.5,
                      config: Optional[SearchConfig] = None,
                      oracle: Optional[AccuracyOracle] = None) -> list[OptimalityTrial]:
    """Evolutionary search vs exhaustive optimum, with the oracle as objective."""
    space = space or desk_space()
    profile = profile or make_standard_profiles()["gpu_like"]
    config = config or SearchConfig(pop_size=50, total_gen=30, k=10, n_mutation=15, n_crossover=15,
                                    evolve_step=100)
    lut, calib = synthetic_device(space, profile)
    bound = latency_quantile(space, lut, calib, quantile)
    cs = make_constraints({"latency_ms": bound}, lut, calib)

    def objective(a):
        return synthetic_accuracy(a, oracle)

    brute = brute_force_best(space, objective, [(cs.items[0].estimator, bound)], cap=10**6)
    trials = []
    for s in seeds:
        t = time.perf_counter()
        best, _ = search(space, replace(config, rng_seed=s), cs, OracleScorer(oracle))
        v = objective(best)
        trials.append(OptimalityTrial(s, bound, brute.best_value, v, v / brute.best_value,
                                      time.perf_counter() - t))
    return trials


# -- sampling efficiency -------------------------------------------------------

@dataclass
class EfficiencyResult:
    bound_ms: float
    static_acceptance: float
    evolved_acceptance: float
    trace: list

    @property
    def baseline_attempts(self) -> float:
        return 1.0 / self.static_acceptance if self.static_acceptance else float("inf")

    @property
    def evolved_attempts(self) -> float:
        return 1.0 / self.evolved_acceptance if self.evolved_acceptance else float("inf")

    @property
    def ratio(self) -> float:
        return self.evolved_attempts / self.baseline_attempts


def sampling_efficiency(space: Optional[SearchSpace] = None, profile: Optional[DeviceProfile] = None,
                        quantile: float = 0.015, steps: int = 10, n_probe: int = 20000,
                        seed: int = 0, config: Optional[SearchConfig] = None) -> EfficiencyResult:
    """Attempts per accepted subnet before and after ``steps`` evolution updates."""
    space = space or build_default_space()
    profile = profile or make_standard_profiles()["gpu_like"]
    config = replace(config or SearchConfig(), rng_seed=seed)
    lut, calib = synthetic_device(space, profile)
    bound = latency_quantile(space, lut, calib, quantile, n=5000, seed=seed + 1)
    cs = make_constraints({"latency_ms": bound}, lut, calib)
    uniform = init_uniform_distribution(space)
    a0 = acceptance_rate(space, uniform, cs, n_probe, seed + 2)
    dist, trace = evolve_under_constraints(space, cs, OracleScorer(), config, steps)
    a1 = acceptance_rate(space, dist, cs, n_probe // 4, seed + 3)
    return EfficiencyResult(bound, a0, a1, trace)


# -- device adaptivity ---------------------------------------------------------

@dataclass
class AdaptivityRow:
    seed: int
    friendly_mhsa: int
    hostile_mhsa: int
    friendly_bound: float
    hostile_bound: float


def attention_profiles(base: Optional[DeviceProfile] = None, hostile_factor: float = 10.0):
    """Profile pair differing only in attention cost (``hostile_factor`` times apart)."""
    base = base or make_standard_profiles()["cpu_like"]
    friendly = base.scaled(name="attn_friendly", attention_factor=1.0)
    hostile = base.scaled(name="attn_hostile", attention_factor=hostile_factor)
    return friendly, hostile


def adaptivity_study(seeds: Sequence[int], space: Optional[SearchSpace] = None,
                     profiles=None, quantile: float = 0.3,
                     config: Optional[SearchConfig] = None) -> list[AdaptivityRow]:
    """Paired searches on an attention-friendly and an attention-hostile device.

    Each device gets the same relative budget: the ``quantile`` of its own
    latency distribution under uniform sampling.  The accuracy oracle is the
    search objective on both.
    """
    space = space or build_default_space()
    friendly, hostile = profiles or attention_profiles()
    config = config or SearchConfig(total_gen=20)
    setups = []
    for prof in (friendly, hostile):
        lut, calib = synthetic_device(space, prof)
        bound = latency_quantile(space, lut, calib, quantile)
        setups.append((bound, make_constraints({"latency_ms": bound}, lut, calib)))
    rows = []
    for s in seeds:
        counts = []
        for _, cs in setups:
            best, _ = search(space, replace(config, rng_seed=s), cs, OracleScorer())
            counts.append(best.n_mhsa)
        rows.append(AdaptivityRow(s, counts[0], counts[1], setups[0][0], setups[1][0]))
    return rows
