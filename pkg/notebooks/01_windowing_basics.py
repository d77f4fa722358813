"""
Windows, affine forms and what they do to pixels
================================================

A window maps raw 12-bit intensities to display values: everything below
the lower limit is black, everything above the upper limit is white. This
script walks through the arithmetic and checks it numerically.
"""

# %%
# A window is a level (centre) and a width, both in raw pixel units.
import numpy as np

from windownet import WindowSpec, apply_window, from_affine, to_affine
from windownet.windowing import apply_affine

w = WindowSpec(level=1250.0, width=1000.0)
print("limits:", w.lower, w.upper)

px = np.array([0.0, 700.0, 750.0, 1000.0, 1750.0, 4095.0])
print("windowed:", apply_window(px, w))

# %%
# The same window as a clamped affine map, which is what a 1x1 convolution
# with a clamp can learn. The output runs from 0 to the upper limit.
a = to_affine(w)
print(a)
print("affine:", apply_affine(px, a))
print("rescaled window:", (w.upper / w.width) * (apply_window(px, w) - w.lower))

# %%
# Going back: a trained weight and bias give a level and a width again.
print(from_affine(a))

# a negative weight flips the ramp; the recovered window is marked inverted
print(from_affine(type(a)(-a.weight, a.ceiling - a.bias, a.ceiling)))

# %%
# 8-bit display of a window, the way a radiologist would see it.
ramp = np.linspace(0, 4095, 4096)
shown = np.floor((apply_window(ramp, w) - w.lower) * 255.0 / w.width + 0.5)
print("distinct gray levels inside the window:", len(np.unique(shown)))
