"""
Simulated anomalies and normals
===============================

Anomalous sequences are exponential Hawkes processes simulated by Ogata
thinning; normal sequences are homogeneous Poisson processes. A Hawkes
process started empty has fewer events in a short window than its
stationary rate suggests, so the datasets start each sequence after a
burn-in long enough for the start-up transient to vanish.

Run with ``python3 demos/02_simulation.py``.
"""
# %%
import numpy as np

from appd.simulate import ExpHawkesSpec, expected_count, make_dataset, simulate_hawkes, stationary_burn_in

spec = ExpHawkesSpec(mu=10.0, alpha_kernel=1.0, beta=3.0, T=3.2)
print("stationary expectation", spec.stationary_rate * spec.T)
print("empty-start expectation", round(expected_count(spec), 3))

# %%
streams = np.random.SeedSequence(0).spawn(1000)
empty = [len(simulate_hawkes(spec, np.random.default_rng(s))) for s in streams]
burn = stationary_burn_in(spec)
warm = [len(simulate_hawkes(spec, np.random.default_rng(s), burn_in=burn)) for s in streams]
print(f"empty start: mean {np.mean(empty):.2f}   burn-in {burn:.1f}: mean {np.mean(warm):.2f}")

# %% [markdown]
# The mixed dataset used for detection experiments.

# %%
seqs, manifest = make_dataset("mixed", 0)
lengths = {lab: [len(s) for s in seqs if s.label == lab] for lab in ("anomalous", "normal")}
for lab, ls in lengths.items():
    print(f"{lab:9s} n={len(ls):4d}  mean length {np.mean(ls):.1f}")
print("horizon", round(manifest["horizon"], 4))
