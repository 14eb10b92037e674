"""
Comparing the single-stage dispatching policies
===============================================

Round robin ignores server state entirely; join-idle-queue tracks one bit
per server; least-work-left sees exact backlogs; the size-banded policy
additionally reads each task's size and keeps size classes apart. The gap
between them widens dramatically once task sizes become heavy-tailed.
"""

import numpy as np

from dispatchsim.analysis import card_thresholds
from dispatchsim.engine import run
from dispatchsim.metrics import summarize_run
from dispatchsim.policies import parse_policy
from dispatchsim.randomness import replication_seed
from dispatchsim.sweep import SyntheticSource

n, rho = 10, 0.8
jobs, reps = 300_000, 2

for cov in (1.0, 10.0):
    src = SyntheticSource(cov)
    config = src.config(n, rho)
    print(f"\nn={n}, rho={rho}, task size cov={cov:g} (normalized to M/G/1 on pooled capacity)")
    print(f"{'policy':>8} {'mrt':>10} {'normalized':>11}")
    for label in ("rr", "jiq", "lwl", "card"):
        if label == "card":
            th = card_thresholds(src.distribution(), n, rho)
            spec = parse_policy("card", thresholds=th)
        else:
            spec = parse_policy(label)
        # common random numbers: the same replication seeds, hence the same
        # arrivals and sizes, for every policy in the table
        vals, norms = [], []
        for rep in range(reps):
            seed = replication_seed(11, rep)
            wl = src.workload(n, rho, jobs, seed)
            res = summarize_run(run(wl, config, spec, seed), baseline=src.baseline())
            vals.append(res.mrt_seconds)
            norms.append(res.normalized_mrt)
        print(f"{label:>8} {np.mean(vals):>10.2f} {np.mean(norms):>11.4f}")
