"""Constrained evolutionary search with search-space evolution.

The sampling distribution is nudged toward the choices made by the best
constraint-satisfying subnets found so far::

    p_next = lam * p + (1 - lam) * p_star

Being a weighted mean of two distributions, ``p_next`` is again a valid
distribution; :func:`evolve_distribution` relies on nothing else.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np

from .genetic import crossover, mutate
from .latency import CalibrationParams, LatencyLUT, estimate
from .space import (
    MHSA_DS, SamplingDistribution, SearchSpace, dimensions, init_uniform_distribution, sample_subnet,
)
from .subnet import SubnetArch, count_flops, count_params

METRICS = ("latency_ms", "params", "flops")
LOG_COLUMNS = ("generation", "Q", "best_pred", "attempts_per_accept", "entropy")


class InfeasibleConstraints(RuntimeError):
    def __init__(self, generation: int, attempts: int, message: str = ""):
        self.generation = generation
        self.attempts = attempts
        super().__init__(message or f"no feasible subnet after {attempts} consecutive samples "
                                    f"(generation {generation})")


class SupportMismatch(ValueError):
    pass


# -- constraints ---------------------------------------------------------------

@dataclass(frozen=True)
class Constraint:
    metric: str
    bound: float
    estimator: Callable[[SubnetArch], float] = field(compare=False, repr=False)


class ConstraintSet:
    """Upper bounds ``metric(arch) < bound``, one per metric."""

    def __init__(self, items: Sequence[Constraint] = ()):
        seen = set()
        for c in items:
            if c.metric not in METRICS:
                raise ValueError(f"unknown metric {c.metric!r}; expected one of {METRICS}")
            if not c.bound > 0:
                raise ValueError(f"bound for {c.metric} must be positive, got {c.bound}")
            if c.metric in seen:
                raise ValueError(f"metric {c.metric} constrained twice")
            seen.add(c.metric)
        self.items = tuple(items)

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)

    def get(self, metric) -> Optional[Constraint]:
        return next((c for c in self.items if c.metric == metric), None)

    def to_dict(self) -> dict:
        return {c.metric: c.bound for c in self.items}


def latency_estimator(lut: LatencyLUT, calib: CalibrationParams) -> Callable[[SubnetArch], float]:
    return lambda arch: estimate(lut, calib, arch)


def make_constraints(bounds: dict, lut: Optional[LatencyLUT] = None,
                     calib: Optional[CalibrationParams] = None) -> ConstraintSet:
    """Build a :class:`ConstraintSet` from ``{metric: bound}``.

    A latency bound needs a LUT; without ``calib`` the raw LUT sum is used.
    """
    items = []
    for metric, bound in bounds.items():
        if metric == "latency_ms":
            if lut is None:
                raise ValueError("a latency constraint needs a LUT")
            est = latency_estimator(lut, calib or CalibrationParams())
        elif metric == "params":
            est = count_params
        elif metric == "flops":
            est = count_flops
        else:
            raise ValueError(f"unknown metric {metric!r}")
        items.append(Constraint(metric, float(bound), est))
    return ConstraintSet(items)


@dataclass(frozen=True)
class CheckResult:
    passed: bool
    metric: Optional[str] = None
    estimate: Optional[float] = None
    bound: Optional[float] = None

    def __bool__(self):
        return self.passed


def check_constraints(arch: SubnetArch, constraints: ConstraintSet) -> CheckResult:
    """Pass iff every estimate is strictly below its bound; otherwise name the first failure."""
    for c in constraints:
        v = c.estimator(arch)
        if not v < c.bound:
            return CheckResult(False, c.metric, v, c.bound)
    return CheckResult(True)


# -- distributions -------------------------------------------------------------

def space_quality(topk: Sequence[SubnetArch], model) -> float:
    if not topk:
        raise ValueError("space_quality needs at least one subnet")
    return float(np.mean([model.predict(a) for a in topk]))


def _choices(arch: SubnetArch, space: SearchSpace) -> dict[str, list]:
    out: dict[str, list] = {"stem.activation": [arch.stem_activation]}
    for i, (st, sa) in enumerate(zip(space.stages, arch.stages)):
        if i > 0 and space.embeds[i - 1].kind == MHSA_DS:
            e = arch.embeds[i - 1]
            out[f"embed{i}.expansion"] = [e.expansion]
            out[f"embed{i}.activation"] = [e.activation]
        s = f"stage{i + 1}"
        out[f"{s}.width"] = [sa.width]
        out[f"{s}.depth"] = [sa.depth]
        if st.mhsa_allowed:
            out[f"{s}.mhsa"] = [m is not None for m in sa.mhsa]
            out[f"{s}.mhsa_expansion"] = [m.expansion for m in sa.mhsa if m is not None]
            out[f"{s}.mhsa_activation"] = [m.activation for m in sa.mhsa if m is not None]
        out[f"{s}.ffn_type"] = [f.ffn_type for f in sa.ffns]
        out[f"{s}.expansion"] = [f.expansion for f in sa.ffns]
        out[f"{s}.kernel"] = [f.kernel for f in sa.ffns]
        out[f"{s}.activation"] = [f.activation for f in sa.ffns]
    return out


def empirical_distribution(topk: Sequence[SubnetArch], space: SearchSpace,
                           fallback: Optional[SamplingDistribution] = None) -> SamplingDistribution:
    """Choice frequencies among ``topk``; block-level dimensions pool all blocks of a stage.

    A dimension with no occurrences at all (e.g. MHSA expansion when no
    subnet has an MHSA block) takes its vector from ``fallback``, or the
    uniform vector when no fallback is given.
    """
    if not topk:
        raise ValueError("empty top-k")
    dims = dimensions(space)
    counts = {name: np.zeros(len(opts)) for name, opts in dims.items()}
    index = {name: {o: j for j, o in enumerate(opts)} for name, opts in dims.items()}
    for arch in topk:
        for name, vals in _choices(arch, space).items():
            for v in vals:
                counts[name][index[name][v]] += 1
    probs = {}
    for name, c in counts.items():
        total = c.sum()
        if total > 0:
            probs[name] = c / total
        elif fallback is not None:
            probs[name] = np.array(fallback.probs[name])
        else:
            probs[name] = np.full(len(c), 1.0 / len(c))
    return SamplingDistribution(space, probs)


def evolve_distribution(p_t: SamplingDistribution, p_star: SamplingDistribution,
                        lam: float) -> SamplingDistribution:
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    dt, ds = dimensions(p_t.space), dimensions(p_star.space)
    if dt != ds:
        raise SupportMismatch("distributions are over different supports")
    probs = {}
    for name in dt:
        probs[name] = lam * p_t.probs[name] + (1.0 - lam) * p_star.probs[name]
    return SamplingDistribution(p_t.space, probs)


def apply_floor(dist: SamplingDistribution, floor: float) -> SamplingDistribution:
    """Lift every probability to at least ``floor`` and renormalize."""
    if floor <= 0:
        return dist
    probs = {}
    for name, p in dist.probs.items():
        q = np.maximum(p, floor)
        probs[name] = q / q.sum()
    return SamplingDistribution(dist.space, probs)


# -- search --------------------------------------------------------------------

@dataclass(frozen=True)
class SearchConfig:
    pop_size: int = 100
    total_gen: int = 50
    evolve_step: int = 200
    k: int = 25
    lam: float = 0.75
    delta: float = 0.0
    p_mut: float = 0.2
    n_mutation: int = 25
    n_crossover: int = 25
    max_sample_attempts: int = 10**6
    prob_floor: float = 1e-3
    use_floor: bool = True
    evolve_space: bool = True
    history_cap: int = 10**5
    rng_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not 1 <= self.k <= self.pop_size:
            raise ValueError("need 1 <= k <= pop_size")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.evolve_step < 1 or self.max_sample_attempts < 1:
            raise ValueError("evolve_step and max_sample_attempts must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SearchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SearchState:
    generation: int
    population: list
    dist: SamplingDistribution
    Q: float = float("nan")
    history: list = field(default_factory=list)
    n_history: int = 0


@dataclass
class SearchLog:
    rows: list = field(default_factory=list)
    evolutions: list = field(default_factory=list)  # (generation, stored Q, Q_t)
    state: Optional[SearchState] = None
    best_pred: float = float("nan")
    best_metrics: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in self.rows:
            w.writerow([r["generation"]] + [_fmt(r[c]) for c in LOG_COLUMNS[1:]])
        return buf.getvalue()


def _fmt(v) -> str:
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


class _Evaluator:
    """Caches predictions and constraint checks per subnet."""

    def __init__(self, model, constraints: ConstraintSet):
        self.model = model
        self.constraints = constraints
        self._pred: dict = {}
        self._check: dict = {}
        lat = constraints.get("latency_ms")
        self._lat = lat.estimator if lat is not None else None
        self._lat_cache: dict = {}

    def check(self, arch) -> CheckResult:
        r = self._check.get(arch)
        if r is None:
            r = self._check[arch] = check_constraints(arch, self.constraints)
        return r

    def pred(self, arch) -> float:
        v = self._pred.get(arch)
        if v is None:
            v = self._pred[arch] = float(self.model.predict(arch))
        return v

    def latency(self, arch) -> float:
        if self._lat is None:
            return 0.0
        v = self._lat_cache.get(arch)
        if v is None:
            v = self._lat_cache[arch] = self._lat(arch)
        return v

    def rank(self, archs: Sequence[SubnetArch]) -> list[SubnetArch]:
        """Constraint-satisfying members by predicted accuracy, then latency, then position."""
        ok = [(i, a) for i, a in enumerate(archs) if self.check(a)]
        ok.sort(key=lambda t: (-self.pred(t[1]), self.latency(t[1]), t[0]))
        return [a for _, a in ok]


def _rng(seed, *stream):
    return np.random.default_rng([int(seed), *map(int, stream)])


PHASE_INIT, PHASE_REFILL, PHASE_MUT, PHASE_CROSS, PHASE_RESERVOIR = range(5)


def _evolve(dist, topk, space, config):
    new = evolve_distribution(dist, empirical_distribution(topk, space, fallback=dist), config.lam)
    return apply_floor(new, config.prob_floor) if config.use_floor else new


def _history_add(state: SearchState, arch, config: SearchConfig):
    """Reservoir-capped history; ``n_history`` counts every entry ever added."""
    state.n_history += 1
    if len(state.history) < config.history_cap:
        state.history.append(arch)
        return
    j = int(_rng(config.rng_seed, PHASE_RESERVOIR, state.n_history).integers(state.n_history))
    if j < config.history_cap:
        state.history[j] = arch


def search(space: SearchSpace, config: SearchConfig, constraints: ConstraintSet, model,
           dist: Optional[SamplingDistribution] = None) -> tuple[SubnetArch, SearchLog]:
    """Evolutionary search maximizing ``model.predict`` under ``constraints``.

    Initialization rejection-samples the population; every ``evolve_step``
    sampled subnets (feasible or not) the distribution moves toward the
    top-k feasible subnets seen so far.  Each generation then keeps the
    top-k, evolves the distribution when their mean prediction beats the
    stored quality by more than ``delta``, and refills the population with
    mutants, crossovers and fresh samples, each constraint-checked.  All
    randomness is drawn from streams keyed by (seed, phase, generation,
    index), so results do not depend on ``workers``.
    """
    ev = _Evaluator(model, constraints)
    dist = dist or init_uniform_distribution(space)
    state = SearchState(0, [], dist)
    log = SearchLog(state=state)
    seen: set = set()

    # initialization
    idx, attempts, since_accept = 0, 0, 0
    feasible_hist: list = []
    while len(state.population) < config.pop_size:
        arch = sample_subnet(space, state.dist, _rng(config.rng_seed, PHASE_INIT, 0, idx))
        idx += 1
        attempts += 1
        _history_add(state, arch, config)
        if ev.check(arch):
            since_accept = 0
            feasible_hist.append(arch)
            if arch not in seen:
                seen.add(arch)
                state.population.append(arch)
        else:
            since_accept += 1
            if since_accept >= config.max_sample_attempts:
                raise InfeasibleConstraints(0, since_accept)
        if config.evolve_space and state.n_history % config.evolve_step == 0 and feasible_hist:
            # only the top-k can ever matter again, so drop the rest
            feasible_hist = ev.rank(feasible_hist)[:config.k]
            state.dist = _evolve(state.dist, feasible_hist, space, config)
    state.Q = space_quality(state.population, _Cached(ev))
    ranked = ev.rank(state.population)
    log.rows.append({"generation": 0, "Q": state.Q, "best_pred": ev.pred(ranked[0]),
                     "attempts_per_accept": attempts / len(state.population),
                     "entropy": state.dist.entropy()})

    for gen in range(1, config.total_gen + 1):
        state.generation = gen
        topk = ev.rank(state.population)[:config.k]
        q_t = space_quality(topk, _Cached(ev))
        if config.evolve_space and q_t - state.Q > config.delta:
            log.evolutions.append((gen, state.Q, q_t))
            state.Q = q_t
            state.dist = _evolve(state.dist, topk, space, config)
        pop = list(topk)
        seen = set(pop)
        _offspring(pop, seen, topk, config.n_mutation, ev, config, gen, PHASE_MUT,
                   lambda parents, rng: mutate(parents[0], state.dist, config.p_mut, rng))
        _offspring(pop, seen, topk, config.n_crossover, ev, config, gen, PHASE_CROSS,
                   lambda parents, rng: crossover(parents[0], parents[1], rng))
        attempts = accepted = since_accept = 0
        idx = 0
        while len(pop) < config.pop_size:
            arch = sample_subnet(space, state.dist, _rng(config.rng_seed, PHASE_REFILL, gen, idx))
            idx += 1
            attempts += 1
            if ev.check(arch):
                since_accept = 0
                accepted += 1
                if arch not in seen:
                    seen.add(arch)
                    pop.append(arch)
            else:
                since_accept += 1
                if since_accept >= config.max_sample_attempts:
                    raise InfeasibleConstraints(gen, since_accept)
        state.population = pop
        for a in pop:
            _history_add(state, a, config)
        best = ev.rank(pop)[0]
        log.rows.append({"generation": gen, "Q": state.Q, "best_pred": ev.pred(best),
                         "attempts_per_accept": attempts / accepted if accepted else float("nan"),
                         "entropy": state.dist.entropy()})

    best = ev.rank(state.population)[0]
    log.best_pred = ev.pred(best)
    log.best_metrics = {c.metric: float(c.estimator(best)) for c in constraints}
    log.best_metrics.setdefault("params", float(count_params(best)))
    log.best_metrics.setdefault("flops", float(count_flops(best)))
    return best, log


class _Cached:
    def __init__(self, ev: _Evaluator):
        self.ev = ev

    def predict(self, arch):
        return self.ev.pred(arch)


def _offspring(pop, seen, topk, n, ev, config, gen, phase, make):
    """Add up to ``n`` new feasible children; gives up after ``10 n`` tries."""
    if n <= 0 or not topk:
        return
    added = 0
    for t in range(10 * n):
        rng = _rng(config.rng_seed, phase, gen, t)
        parents = [topk[int(j)] for j in rng.integers(len(topk), size=2)]
        child = make(parents, rng)
        if child in seen or not ev.check(child):
            continue
        seen.add(child)
        pop.append(child)
        added += 1
        if added == n:
            break


# -- sampling efficiency -------------------------------------------------------

def acceptance_rate(space: SearchSpace, dist: SamplingDistribution, constraints: ConstraintSet,
                    n: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    ok = sum(bool(check_constraints(sample_subnet(space, dist, rng), constraints)) for _ in range(n))
    return ok / n


def evolve_under_constraints(space: SearchSpace, constraints: ConstraintSet, model,
                             config: SearchConfig, steps: int,
                             dist: Optional[SamplingDistribution] = None) -> tuple[SamplingDistribution, list]:
    """Run only the initialization-stage evolution for ``steps`` updates.

    Every ``evolve_step`` samples the distribution moves toward the top-k
    feasible subnets seen so far.  Returns the final distribution and the
    per-block attempts-per-accept (``inf`` for blocks with no acceptance).
    """
    ev = _Evaluator(model, constraints)
    dist = dist or init_uniform_distribution(space)
    feasible: list = []
    trace = []
    done = 0
    block = 0
    while done < steps:
        acc = 0
        for j in range(config.evolve_step):
            arch = sample_subnet(space, dist, _rng(config.rng_seed, PHASE_INIT, block, j))
            if ev.check(arch):
                acc += 1
                feasible.append(arch)
        trace.append(config.evolve_step / acc if acc else float("inf"))
        block += 1
        if block * config.evolve_step >= config.max_sample_attempts and not feasible:
            raise InfeasibleConstraints(0, block * config.evolve_step)
        if feasible:
            feasible = ev.rank(feasible)[:config.k]
            dist = _evolve(dist, feasible, space, config)
            done += 1
    return dist, trace
