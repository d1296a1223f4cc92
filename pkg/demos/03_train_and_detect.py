"""
Adversarial training and online detection
=========================================

The detector (a deep-Fourier-kernel Hawkes model) and an LSTM generator
play a minimax game: the detector raises the likelihood of real anomalies
relative to generated sequences, the generator imitates the anomalies. The
mean prefix likelihood of generated sequences then serves as a
step-dependent alarm threshold.

Run with ``python3 demos/03_train_and_detect.py [iterations]`` (default 100;
the desk-scale experiments use 200).
"""
# %%
import sys

import numpy as np

from appd.detection import estimate_threshold, prefix_matrix
from appd.evaluation import stepwise_evaluate
from appd.simulate import make_dataset
from appd.training import TrainConfig, train

M0 = int(sys.argv[1]) if len(sys.argv) > 1 else 100
seqs, manifest = make_dataset("mixed", 0)
anomalous = [s for s in seqs if s.label == "anomalous"]
normal = [s for s in seqs if s.label == "normal"]


def progress(st):
    if st.iteration % 20 == 0:
        h = st.history
        print(f"iter {st.iteration:4d}  J {h.J[-1]:8.2f}  real {h.real_mean[-1]:8.2f}  gen {h.gen_mean[-1]:8.2f}")


# %%
state = train(anomalous[:200], TrainConfig(M0=M0, seed=0), callback=progress)
print(f"mu {state.detector.mu:.2f}  alpha {state.detector.alpha:.3f}")

# %% [markdown]
# Threshold from 64 generated sequences, then held-out mean statistics.

# %%
i_max = 25
curve = estimate_threshold(state.detector, state.generator, 64, i_max, np.random.default_rng(1), manifest["horizon"])
held = anomalous[200:300] + normal[:100]
a = prefix_matrix(anomalous[200:300], state.detector, i_max).mean(axis=0)
n = prefix_matrix(normal[:100], state.detector, i_max).mean(axis=0)
print(" step  anomalous  threshold     normal")
for i in (1, 5, 10, 15, 20, 25):
    print(f"{i:5d} {a[i - 1]:10.2f} {curve.eta[i - 1]:10.2f} {n[i - 1]:10.2f}")

# %% [markdown]
# Step-wise detection quality on the held-out mix.

# %%
for r in stepwise_evaluate(held, state.detector, curve, i_max)[4::5]:
    print(f"step {r.step:2d}  precision {r.precision:.3f}  recall {r.recall:.3f}  f1 {r.f1:.3f}")
