"""Inside one scheduling decision.

Five pending speculation candidates, a moderately loaded engine, and the
greedy pass that decides which of them are worth launching now.
"""

# %%
from specsim.cost_model import CostModelParams
from specsim.engine import LoadSnapshot
from specsim.scheduler import SchedulerConfig, SpecCandidate, SpeculationQueue, select_step

params = CostModelParams()
queue = SpeculationQueue(
    [
        SpecCandidate(task_id=1, step_index=2, enqueue_time=0.40, estimated_hit_probability=0.55, t_act=1.5, L_s=1800, l_s=7.0),
        SpecCandidate(task_id=2, step_index=5, enqueue_time=0.10, estimated_hit_probability=0.23, t_act=1.5, L_s=3900, l_s=7.0),
        SpecCandidate(task_id=3, step_index=3, enqueue_time=0.45, estimated_hit_probability=0.41, t_act=1.5, L_s=2400, l_s=7.0),
        SpecCandidate(task_id=4, step_index=9, enqueue_time=0.30, estimated_hit_probability=0.11, t_act=1.5, L_s=6100, l_s=7.0),
        SpecCandidate(task_id=5, step_index=2, enqueue_time=0.05, estimated_hit_probability=0.55, t_act=1.5, L_s=1500, l_s=7.0),
    ]
)
print("priority order:", [(c.task_id, c.step_index) for c in queue.ordered()])

# %% light load launches everything worth it; heavy load launches nothing
for load in (LoadSnapshot(12, 4, 6, 2), LoadSnapshot(240, 120, 60, 60)):
    q = SpeculationQueue(queue.ordered())
    res = select_step(q, load, params, SchedulerConfig(t_w=1.0), now=0.5)
    print(f"\nload N={load.n} (N_m={load.n_main}, N_a={load.n_aggressive})")
    for c, g in zip(res.selected, res.per_candidate):
        print(f"  launch task {c.task_id} step {c.step_index}: +{g.reduction:.4f}s saved, "
              f"-{g.decode_overhead + g.prefill_overhead:.4f}s overhead")
    print(f"  expired: {[c.task_id for c in res.expired]}, left queued: {len(q)}")
