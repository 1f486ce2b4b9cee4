"""
Warping the previous frame's features
=====================================

The alignment module moves a normalized sampling grid by a predicted offset
and bilinearly resamples the local memory value. Here the offset is set by
hand to a one-pixel shift so the effect is easy to read off.
"""

import numpy as np

from srnet import ops
from srnet.fam import DeformParams, deform_conv, make_grid
from srnet.tensor import Tensor

H, W = 5, 6
value = np.zeros((H, W, 1))
value[1:3, 1:3] = 1.0  # a 2x2 blob

grid = make_grid(H, W, dtype=np.float64)
# one pixel to the left in normalized units is 2 / (W - 1)
shift = np.zeros((H, W, 2))
shift[..., 0] = -2.0 / (W - 1)
warped = ops.bilinear_sample(Tensor(value), Tensor(grid.points.data + shift)).data

print("original blob")
print(value[..., 0])
print("sampled one pixel to the left: the blob moves right")
print(warped[..., 0])

# half a pixel gives the average of neighbours
shift[..., 0] = -1.0 / (W - 1)
print("half-pixel shift")
print(ops.bilinear_sample(Tensor(value), Tensor(grid.points.data + shift)).data[..., 0])

# the deformable conv with zero offsets and unit modulation is a plain 3x3 conv
kernel = np.zeros((3, 3, 1, 1))
kernel[1, 1] = 1.0
d = DeformParams(Tensor(np.zeros((H, W, 18))), Tensor(np.ones((H, W, 9))))
same = deform_conv(Tensor(value), d, Tensor(kernel)).data
print("centre-tap kernel through deform_conv reproduces the input:", np.array_equal(same, value))
