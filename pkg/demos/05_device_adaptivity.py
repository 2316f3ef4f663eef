# %% [markdown]
# # Same budget, different hardware
#
# Two profiles that differ only in how expensive attention is.  Each gets
# the 30% latency quantile of its own uniform distribution as a budget, so
# both searches are equally tight.  The hostile device ends up with fewer
# MHSA blocks.

# %%
from hybridnas.evolution import SearchConfig
from hybridnas.space import count_subnets
from hybridnas.studies import adaptivity_study, desk_space, optimality_trials

rows = adaptivity_study(range(5), config=SearchConfig(total_gen=10))
for r in rows:
    print(f"seed {r.seed}: friendly {r.friendly_mhsa} MHSA, hostile {r.hostile_mhsa} MHSA")

# %% [markdown]
# On a slice of the space small enough to enumerate, the search can be
# checked against the exhaustive optimum.

# %%
print(f"exhaustive check over {count_subnets(desk_space()):,} subnets")
for t in optimality_trials(range(5)):
    print(f"seed {t.seed}: found {t.found:.4f} of optimum {t.optimum:.4f} ({t.ratio:.1%})")
