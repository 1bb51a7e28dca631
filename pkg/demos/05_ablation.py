"""Cooperation against its two ablations on a few benchmark seeds.

The single-R baseline trains the reconstructor on every point. The detection
ablation trains a detector against that baseline's frozen errors. Both are
compared to the cooperative pair on detection F1 and on Dis.
"""

# %%
import sys

from cnts.data import default_benchmark
from cnts.evaluation import best_f1_threshold, dis, evaluate, mse_split, point_recon_errors, point_scores
from cnts.training import benchmark_config, train_baseline_detector, train_baseline_reconstructor, train_cnts

seeds = range(int(sys.argv[1]) if len(sys.argv) > 1 else 2)

# %%
print(f"{'seed':>4} {'F1 cnts':>8} {'F1 det':>7} {'Dis cnts':>9} {'Dis R':>7}")
for seed in seeds:
    train, test = default_benchmark(seed)
    cfg = benchmark_config(seed)

    R, D, _ = train_cnts(train, cfg)
    coop = evaluate(D, R, test)

    R_base, h_base = train_baseline_reconstructor(train, cfg)
    D_det, _, _ = train_baseline_detector(train, cfg, reconstructor=R_base, reconstructor_history=h_base)
    det_f1 = best_f1_threshold(point_scores(D_det, test).scores, test.labels)[1]
    base_dis = dis(*mse_split(point_recon_errors(R_base, test), test.labels))

    print(f"{seed:>4} {coop.f1:>8.3f} {det_f1:>7.3f} {coop.dis:>9.1f} {base_dis:>7.1f}")

# %% The same comparison is available from the command line:
#   cnts ablate --config my_config.json --seed 0 --out runs
