"""Many agents sharing one engine.

Poisson task arrivals at increasing rates. Unconditional speculation
helps at low load and hurts once decode batches grow past the knee; the
load-aware scheduler backs off instead.
"""

# %%
from specsim import Mode, preset, sweep

cfg = preset("serving")
summaries = sweep(cfg.sweep.rates, cfg)

# %%
table = {(s.mode, s.rate): s for s in summaries}
rates = cfg.sweep.rates
print("mean latency (s)")
print(f"{'mode':15s} " + " ".join(f"{r:>7g}" for r in rates))
for mode in Mode:
    print(f"{mode.value:15s} " + " ".join(f"{table[mode, r].mean_latency:7.2f}" for r in rates))

# %% fewer speculations get through as load rises
print("SPAgentFull hit rate: " + ", ".join(f"{r:g}->{table[Mode.FULL, r].hit_rate:.3f}" for r in rates))
