"""Why short speculative requests should jump the queue.

A saturated two-slot engine receives pairs of (long main request, short
speculative request). With first-come-first-served admission the main
request often grabs the free slot and the speculation finishes too late
to be useful.
"""

# %%
import numpy as np

from specsim.engine import Policy
from specsim.scenarios import paired_completion_scenario

for policy in Policy:
    outcomes = paired_completion_scenario(0, policy)
    marks = " ".join("spec-first" if o.spec_first else "main-first" for o in outcomes)
    print(f"{policy.value:17s} {marks}")

# %% over many seeds
for policy in Policy:
    frac = np.mean([o.spec_first for s in range(50) for o in paired_completion_scenario(s, policy)])
    print(f"{policy.value:17s} speculation finishes first in {frac:.1%} of pairs")
