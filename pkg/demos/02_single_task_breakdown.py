"""Where does a single agent task spend its time?

Runs the shipped single-task preset (tasks one at a time on an idle
engine) in every mode and splits latency into LLM, un-overlapped action
and other time.
"""

# %%
from specsim import Mode, preset, run

cfg = preset("default")
summaries = {m: run(cfg.replace(mode=m)) for m in Mode}

# %%
naive = summaries[Mode.NAIVE].mean_latency
print(f"{'mode':15s} {'mean':>7s} {'llm':>7s} {'action':>7s} {'other':>7s} {'speedup':>8s}")
for mode, s in summaries.items():
    llm, action, other = s.breakdown
    print(f"{mode.value:15s} {s.mean_latency:7.2f} {llm:7.2f} {action:7.2f} {other:7.2f} {naive / s.mean_latency:8.3f}")

# %% the aggressive phase hands over to verified speculation around step five
full = summaries[Mode.FULL]
print(f"mean first verified step: {full.mean_transition_step:.2f}")
print(f"buffer hit rate on verified steps: {full.hit_rate:.3f}")
print(f"mean buffer footprint per task: {full.mean_footprint:.0f} bytes")
