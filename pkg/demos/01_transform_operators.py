"""Transformation operators: shifts and shears as generalized permutations.

Each operator stores one source index per output pixel, so applying it is a
gather, its adjoint is a scatter, and propagating a diagonal covariance
through it stays exact.  This script builds the basic families and shows the
bookkeeping on a small image.
"""

import numpy as np

from transmix import (ImageShape, apply, apply_adjoint,
                      build_shear_translation_set, build_translation_set,
                      shift_op, transform_diag_cov)

shape = ImageShape(5, 5)
image = np.zeros((5, 5))
image[1:4, 2] = 1.0  # a vertical stroke
flat = image.reshape(-1)

print("input:")
print(image.astype(int))

down = shift_op(shape, 1, 0, "wrap")
print("\nshifted down one pixel (wrap):")
print(apply(down, flat).reshape(5, 5).astype(int))

print("\nadjoint undoes a wrap shift exactly:")
print(apply_adjoint(down, apply(down, flat)).reshape(5, 5).astype(int))

pad = shift_op(shape, 0, 2, "zero")
print("\nshifted right two pixels (zero padding):")
print(apply(pad, flat).reshape(5, 5).astype(int))

# the translation grid used by the video models: l = i * M + j
grid = build_translation_set(shape, 3, 3)
print(f"\n3x3 shift grid: {grid.L} ops, offsets per op:")
print(grid.grid_offsets().reshape(3, 3, 2))

# diagonal covariance transport: exact because ops are one-entry-per-row
phi = np.linspace(0.1, 2.5, 25)
psi = np.full(25, 0.05)
print("\ntransported variance of the down-shift (first row):")
print(np.round(transform_diag_cov(down, phi, psi).reshape(5, 5)[0], 2))

# the default shear+translate family for 8x8 glyphs
shears = build_shear_translation_set(ImageShape(8, 8))
print(f"\ndefault shear family: {shears.L} ops "
      f"(shear slope, horizontal shift) pairs, first five: "
      f"{shears.params[:5]}")
line = np.zeros((8, 8))
line[:, 4] = 1.0
sheared = apply(shears[0], line.reshape(-1)).reshape(8, 8)
print("a vertical line under the strongest negative shear:")
print(sheared.astype(int))
