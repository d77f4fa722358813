"""
Small versions of the three experiments
=======================================

The experiments here run on a tiny dataset for two epochs, so the numbers
are noise; the point is the workflow. The acceptance suite runs them at
full size.
"""

# %%
import os
import tempfile
from dataclasses import replace

from windownet import experiments as ex
from windownet.multiwindow import recover_windows
from windownet.synthlab import SynthConfig, generate
from windownet.windowing import WindowSpec

ds = generate(SynthConfig(n_train=64, n_val=32, n_test=32, image_size=32, blob_radius=(10.0, 15.0)))
train = replace(ex.DESK_TRAIN_CONFIG, max_epochs=2)

# %%
# Bit depth: the same backbone on 8-bit and on full-range input.
bd = ex.run_experiment(ex.ExperimentSpec("bitdepth", train=train), ds)
print(ex.summary_text(bd))

# %%
# A two-window grid. The full-range window is always added.
grid = ex.run_experiment(
    ex.ExperimentSpec("grid", train=train, grid=(WindowSpec(1250.0, 1000.0), WindowSpec(3250.0, 1000.0))), ds
)
print(ex.summary_text(grid))
print("selected for the multi-window layer:", ex.top_windows(grid, k=1))

# %%
# Trainable windows. The recovered windows start at the init list.
mw = ex.run_experiment(ex.ExperimentSpec("multiwindow", train=train), ds)
print(ex.summary_text(mw))
run = mw.run("windownet")
for (l0, w0), w1 in zip([(w.level, w.width) for w in run.recovered[0][1]], run.recovered[-1][1]):
    print(f"level {l0:7.1f} -> {w1.level:7.1f}   width {w0:7.1f} -> {w1.width:7.1f}")

# %%
# Everything is written as CSV plus checkpoints.
out = tempfile.mkdtemp()
for path in ex.report([bd, grid, mw], out):
    print(os.path.relpath(path, out))
model = ex.model_from_checkpoint(run.checkpoint)
print(recover_windows(model.layer)[:3])
