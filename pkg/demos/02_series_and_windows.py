"""Loading series, z-scoring them and cutting them into windows."""

# %%
import tempfile
from pathlib import Path

import numpy as np

from cnts.data import (
    Anomaly,
    SineBase,
    default_benchmark,
    fit_norm,
    labels_from_ranges,
    load_series_csv,
    make_windows,
    normalize,
    ranges_from_labels,
    save_series_csv,
    synth_series,
)

# %% A sine with noise, one spike and one level shift.
# Magnitudes are in units of the sine's standard deviation.
series = synth_series(
    600,
    SineBase(period=50, amplitude=1.0),
    noise_std=0.05,
    anomalies=[Anomaly(120, 1, "spike", 4.0), Anomaly(400, 10, "level_shift", -2.0)],
    seed=7,
)
print(series.name, len(series), "points,", int(series.labels.sum()), "labeled anomalous")
print("anomalous ranges:", ranges_from_labels(series.labels))

# %% Ranges and point labels convert both ways.
print(labels_from_ranges([(0, 1), (1, 3)], 5))

# %% CSV round trip is lossless because values are written with repr.
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "demo.csv"
    save_series_csv(series, path)
    print(path.read_text().splitlines()[:3])
    back = load_series_csv(path)
    print("bit-identical after reload:", np.array_equal(back.values, series.values))

# %% Normalization statistics come from the training data only.
stats = fit_norm(series)
z = normalize(series, stats)
print(f"mean {stats.mean:.4f} std {stats.std:.4f}; normalized mean {z.values.mean():.2e} std {z.values.std():.4f}")

# %% Windows: stride 2 on five points with length 2 gets a tail window so index 4 is covered.
print(make_windows(np.arange(5.0), 2, stride=2).origins)
batch = make_windows(z, 64, stride=32)
print("training windows:", batch.windows.shape)

# %% The default benchmark: unlabeled training half, labeled test half, about 2% anomalous.
train, test = default_benchmark(seed=0)
print(train.name, train.labeled, "|", test.name, f"label rate {test.labels.mean():.4f}")
