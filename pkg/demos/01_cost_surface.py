"""How long does one engine step take?

Fit the batch-time model to the shipped profile table and look at how
decode and prefill costs grow with load.
"""

# %%
from specsim.cost_model import EMPTY, PrefillSet, calibrate, default_profile_table, hybrid_batch_time

fit = calibrate(default_profile_table())
params = fit.params
print(params)
print(f"worst row error after the fit: {fit.max_relative_error:.2%}")

# %% decode-only steps flatten until the knee, then get steeper
for n in (1, 16, 64, 128, 256):
    t = hybrid_batch_time(EMPTY, n, params)
    print(f"N={n:4d}  step={t * 1e3:7.3f} ms")

slow = hybrid_batch_time(EMPTY, 128, params) / hybrid_batch_time(EMPTY, 1, params) - 1
print(f"slowdown at N=128 vs N=1: {slow:.1%}")

# %% prefills ride along with decode and add roughly linear cost
for lengths in ([], [512], [512, 512], [4096]):
    t = hybrid_batch_time(PrefillSet.of(lengths), 32, params)
    print(f"prefill {lengths!s:12s} with 32 decoders -> {t * 1e3:6.3f} ms")
