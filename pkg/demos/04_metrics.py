"""Threshold sweep, AUC and the reconstruction contrast, checked by brute force."""

# %%
import itertools

import numpy as np

from cnts.evaluation import apply_threshold, auc, best_f1_threshold, confusion_metrics, dis, mse_split

# %% The sweep tries every distinct score plus one just below the minimum.
scores = np.array([0.1, 0.4, 0.35, 0.8])
labels = np.array([0, 0, 1, 1])
delta, f1, conf = best_f1_threshold(scores, labels)
print(f"best threshold {delta}, F1 {f1:.3f}")
print("predictions at that threshold:", apply_threshold(scores, delta))

for cand in [np.nextafter(scores.min(), -np.inf), *sorted(scores)]:
    c = confusion_metrics(labels, apply_threshold(scores, cand))
    print(f"  threshold {cand:+.4f} -> tp {c.tp} fp {c.fp} F1 {c.f1:.3f}")

# %% AUC is the fraction of (anomalous, normal) pairs ranked correctly, ties counting one half.
s = np.array([0.2, 0.8, 0.6, 0.4])
y = np.array([0, 1, 0, 1])
pairs = [(p, q) for p, q in itertools.product(s[y == 1], s[y == 0])]
by_hand = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p, q in pairs) / len(pairs)
print("auc", auc(s, y), "by hand", by_hand)
print("unchanged by a monotone transform:", auc(np.exp(3 * s), y))

# %% Dis: how much worse anomalous points are reconstructed than normal ones.
errors = np.array([0.01, 0.02, 0.9, 0.015, 1.2])
flags = np.array([0, 0, 1, 0, 1])
mse_n, mse_a = mse_split(errors, flags)
print(f"mse_n {mse_n:.4f}  mse_a {mse_a:.4f}  Dis {dis(mse_n, mse_a):.1f}")

# %% A larger random check of the O(n log n) sweep against the slow loop.
rng = np.random.default_rng(0)
for _ in range(200):
    n = rng.integers(2, 60)
    sc = rng.integers(0, 8, size=n) / 2.0
    lb = rng.integers(0, 2, size=n)
    if lb.min() == lb.max():
        continue
    cands = [np.nextafter(sc.min(), -np.inf), *np.unique(sc)]
    slow = max(confusion_metrics(lb, apply_threshold(sc, c)).f1 for c in cands)
    assert best_f1_threshold(sc, lb)[1] == slow
print("sweep agrees with the slow loop on 200 tied instances")
