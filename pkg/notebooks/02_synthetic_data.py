"""
The synthetic 12-bit dataset
============================

Each class hides a faint blob in one intensity band. The blob only raises
pixels that already lie in that band, and the raise is smaller than one
8-bit gray step, so rounding to 8 bits erases most of it.
"""

# %%
import numpy as np

from windownet import synthlab
from windownet.metrics import roc_auc

cfg = synthlab.SynthConfig(n_train=40, n_val=20, n_test=200, seed=1)
ds = synthlab.generate(cfg)
print(ds.test.images.shape, ds.test.labels.shape)
print("distinct raw values:", len(np.unique(ds.test.images)))

# %%
# Bands per class: centre, half-width and contrast.
for i, band in enumerate(cfg.signal_bands[:4]):
    print(i, band, "oracle window:", synthlab.oracle_best_window(cfg, i))

# %%
# Classes 0, 4, 8 and 12 share a band (the list above repeats every four
# classes), so their blobs look alike and only the amount of shifted area
# tells them apart.
#
# With one planted class and a shift of 8 raw units, a matched filter
# that knows the band separates the classes on raw data and mostly fails
# after 8-bit quantization.
from windownet.imagepipe import ImageTensor, quantize

band = (synthlab.snap_to_8bit_step(2500.0), 100.0, 8.0)
one = synthlab.SynthConfig(n_train=300, n_val=0, n_test=0, signal_bands=(band,) + (None,) * 13, seed=11)
d1 = synthlab.generate(one)
y = d1.train.labels[:, 0]
raw = synthlab.matched_filter_scores(d1.train.images, band)
q = quantize(ImageTensor(d1.train.images[:, 0], 12), 8).data[:, None] * (4095.0 / 255.0)
print("12-bit AUC:", roc_auc(raw, y))
print(" 8-bit AUC:", roc_auc(synthlab.matched_filter_scores(q, band), y))
