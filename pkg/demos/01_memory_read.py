"""
Reading a memory with key affinities
====================================

Each query pixel compares its key with every memory key and takes a softmax
over the memory. The readout is the affinity-weighted average of the memory
values, so a query that matches one memory pixel copies that pixel's value.
"""

import numpy as np

from srnet.affinity import affinity, memory_read
from srnet.tensor import Tensor

rng = np.random.default_rng(0)

# one memory frame of 2x2 pixels, 3-dim keys, 1-dim values
mem_keys = 3.0 * rng.standard_normal((1, 2, 2, 3))
mem_values = np.arange(4.0).reshape(1, 2, 2, 1)

# the query reuses the memory keys in reverse order, plus a little noise
query_keys = mem_keys[0].reshape(4, 3)[::-1].reshape(2, 2, 3) + 0.05 * rng.standard_normal((2, 2, 3))

w = affinity(Tensor(mem_keys), Tensor(query_keys)).data
print("affinity (rows: memory pixel, cols: query pixel)")
print(np.round(w, 3))
print("columns sum to", w.sum(axis=0))

out = memory_read(Tensor(mem_keys), Tensor(mem_values), Tensor(query_keys)).data
print("read values:", np.round(out[..., 0].ravel(), 3), "(memory was 0 1 2 3, reversed by the query)")
