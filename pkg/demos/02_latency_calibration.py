# %% [markdown]
# # From block measurements to end-to-end latency
#
# Block latencies come from a synthetic device.  A LUT sum overestimates the
# real network (cached activations, fused kernels), so a line
# ``measured = kappa * lut_sum + epsilon`` is fitted on a handful of
# end-to-end measurements.

# %%
import numpy as np

from hybridnas.latency import build_lut, calibrate, estimate, proxy_report, spearman
from hybridnas.oracle import end_to_end_latency, lut_measurements, make_standard_profiles
from hybridnas.space import build_default_space, init_uniform_distribution, sample_subnet

space = build_default_space()
dist = init_uniform_distribution(space)
profiles = make_standard_profiles()

# %%
rows = []
for name, prof in profiles.items():
    lut = build_lut(lut_measurements(space, prof), space, device=name)
    calib_set = [sample_subnet(space, dist, [1, i]) for i in range(10)]
    pairs = [(a, end_to_end_latency(a, prof, 0.8, 1.5, 0.01, [1, i])) for i, a in enumerate(calib_set)]
    calib = calibrate(lut, pairs)
    held = [sample_subnet(space, dist, [2, i]) for i in range(200)]
    truth = [end_to_end_latency(a, prof, 0.8, 1.5, 0.01, [2, i]) for i, a in enumerate(held)]
    est = [estimate(lut, calib, a) for a in held]
    rows.append((name, calib.kappa, calib.epsilon, spearman(est, truth), float(np.median(truth))))

print(f"{'device':10s} {'kappa':>7s} {'eps':>7s} {'rho':>6s} {'median ms':>9s}")
for r in rows:
    print(f"{r[0]:10s} {r[1]:7.3f} {r[2]:7.3f} {r[3]:6.3f} {r[4]:9.2f}")

# %%
# FLOPs and parameter counts are weaker latency proxies, most visibly on
# the VPU-like device where memory traffic and activations dominate.
prof = profiles["vpu_like"]
lut = build_lut(lut_measurements(space, prof), space)
held = [sample_subnet(space, dist, [3, i]) for i in range(300)]
truth = [end_to_end_latency(a, prof, 0.8, 1.5) for a in held]
calib = calibrate(lut, list(zip(held[:20], truth[:20])))
for row in proxy_report(held, lut, calib, truth):
    print(f"{row.predictor:7s} spearman={row.spearman:.3f} rmse={row.rmse_ms:.2f} ms")
