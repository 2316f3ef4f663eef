# %% [markdown]
# # Accuracy predictor
#
# Subnets are one-hot encoded block by block and fed to a small 1-D CNN
# trained with L1 loss.  Labels come from the synthetic accuracy oracle, so
# the whole loop runs in under a minute.

# %%
import numpy as np

from hybridnas.latency import spearman
from hybridnas.oracle import synthetic_accuracy
from hybridnas.predictor import Hyper, LabeledPair, grad_check, train
from hybridnas.space import build_default_space, init_uniform_distribution, sample_subnet

space = build_default_space()
dist = init_uniform_distribution(space)
rng = np.random.default_rng(0)
archs = [sample_subnet(space, dist, rng) for _ in range(3000)]
pairs = [LabeledPair(a, synthetic_accuracy(a)) for a in archs]

# %%
model = train(pairs[:2500], pairs[2500:], Hyper(epochs=15), rng_seed=0, space=space)
for h in model.history[::3]:
    print(f"epoch {h['epoch']:2d} train_l1={h['train_l1']:.4f} val_l1={h['val_l1']:.4f} "
          f"rho={h['val_spearman']:.3f}")

# %%
val = pairs[2500:]
pred = model.predict_many([p.arch for p in val])
print("validation spearman", round(spearman(pred, [p.accuracy for p in val]), 4))
print("gradient check, max relative error", grad_check(model, val[:16], max_params=500))
