"""Training the reconstructor and detector together and watching both improve."""

# %%
import numpy as np

from cnts.data import default_benchmark
from cnts.evaluation import evaluate
from cnts.training import benchmark_config, train_cnts

# %% Train on the unlabeled half; the labeled half is only watched, never trained on.
train, test = default_benchmark(seed=0)
cfg = benchmark_config(seed=0)
print(cfg)

R, D, history = train_cnts(train, cfg, monitor=test)

# %% Each stage runs R passes (D frozen), then D passes (R frozen).
print(f"{'stage':>5} {'phase':>5} {'sub':>3} {'loss_r':>9} {'loss_d':>9} {'dis':>8} {'f1':>6}")
for rec in history.records:
    lr = "" if rec.loss_r is None else f"{rec.loss_r:.5f}"
    ld = "" if rec.loss_d is None else f"{rec.loss_d:.5f}"
    print(f"{rec.stage:>5} {rec.phase:>5} {rec.sub_epoch:>3} {lr:>9} {ld:>9} {rec.dis:>8.2f} {rec.f1:>6.3f}")

# %% Kept-point reconstruction loss at the end of each stage.
print("R loss per stage:", np.round(history.stage_losses("R"), 5))
print("seconds per stage:", np.round(history.stage_seconds, 1))

# %% Final test-set report.
report = evaluate(D, R, test)
print(f"F1 {report.f1:.3f}  AUC {report.auc:.3f}  ACC {report.acc:.4f}  Dis {report.dis:.1f}")
print(f"tp {report.tp} fp {report.fp} fn {report.fn} tn {report.tn} at threshold {report.threshold:.4f}")
