# %% [markdown]
# # Constrained search with an evolving sampling distribution
#
# Under a tight latency bound almost every uniform sample is rejected.
# Moving the sampling distribution toward the best feasible subnets makes
# rejection sampling cheap again.

# %%
from hybridnas.evolution import SearchConfig, make_constraints, search
from hybridnas.latency import estimate
from hybridnas.oracle import OracleScorer, make_standard_profiles, synthetic_device
from hybridnas.space import build_default_space
from hybridnas.studies import sampling_efficiency
from hybridnas.subnet import count_params

res = sampling_efficiency()
print(f"bound {res.bound_ms:.2f} ms: {res.baseline_attempts:.1f} attempts per accepted subnet "
      f"under the uniform distribution, {res.evolved_attempts:.2f} after 10 updates")
print("attempts per accept, per block of samples:", [round(t, 1) for t in res.trace])

# %%
# A joint latency and parameter budget on the GPU-like device.
space = build_default_space()
lut, calib = synthetic_device(space, make_standard_profiles()["gpu_like"])
cs = make_constraints({"latency_ms": 20.0, "params": 5e6}, lut, calib)
best, log = search(space, SearchConfig(total_gen=20), cs, OracleScorer())
print(f"latency {estimate(lut, calib, best):.2f} ms, params {count_params(best):,}, "
      f"predicted accuracy {log.best_pred:.4f}, MHSA blocks {best.n_mhsa}")
print(log.to_csv())
