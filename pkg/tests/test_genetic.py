import numpy as np

from hybridnas.genetic import crossover, mutate
from hybridnas.space import degenerate_distribution, max_subnet, sample_subnet, validate


def test_zero_rate_is_identity(space, uniform):
    a = sample_subnet(space, uniform, 0)
    assert mutate(a, uniform, 0.0, 1) == a


def test_full_rate_degenerate_gives_unique_arch(space, uniform):
    d = degenerate_distribution(space, {})
    target = sample_subnet(space, d, 0)
    a = sample_subnet(space, uniform, 3)
    assert mutate(a, d, 1.0, 5) == target


def test_mutation_closed(space, uniform):
    rng = np.random.default_rng(0)
    changed = 0
    for i in range(1000):
        a = sample_subnet(space, uniform, rng)
        b = mutate(a, uniform, 0.2, rng)
        assert validate(space, b) == []
        changed += a != b
    assert changed > 900


def test_crossover_properties(space, uniform):
    rng = np.random.default_rng(1)
    for i in range(1000):
        a, b = sample_subnet(space, uniform, rng), sample_subnet(space, uniform, rng)
        c = crossover(a, b, rng)
        assert validate(space, c) == []
        for j, s in enumerate(c.stages):
            assert s in (a.stages[j], b.stages[j])
    a = max_subnet(space)
    assert crossover(a, a, 0) == a
