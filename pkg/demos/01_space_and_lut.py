# %% [markdown]
# # The search space and its latency table
#
# Four stages of convolutional FFN blocks, attention allowed in the last two,
# and an attention-based downsampling layer in front of stage 4.

# %%
from collections import Counter

from hybridnas.space import (
    build_default_space, count_subnets, enumerate_lut_blocks, init_uniform_distribution, lut_rows,
    magnitude, max_subnet, min_subnet, sample_subnet,
)
from hybridnas.subnet import count_flops, count_params

space = build_default_space()
n = count_subnets(space)
print(f"{n} subnets (~1e{magnitude(n)})")

# %%
# Every block the space can produce needs one latency measurement.
for name, keys in lut_rows(space):
    print(f"{name:>12s} {len(keys):4d}")
print("total", len(enumerate_lut_blocks(space)))

# %%
# Extremes and a few uniform samples.
for label, arch in (("min", min_subnet(space)), ("max", max_subnet(space))):
    print(label, f"params={count_params(arch):,}", f"flops={count_flops(arch):,}", f"mhsa={arch.n_mhsa}")

dist = init_uniform_distribution(space)
samples = [sample_subnet(space, dist, [0, i]) for i in range(1000)]
print("MHSA count among 1000 uniform samples:", sorted(Counter(a.n_mhsa for a in samples).items()))
