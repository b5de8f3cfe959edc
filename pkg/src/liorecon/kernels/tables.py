"""Marching-cubes lookup tables.

Corner/edge numbering follows the classic Lorensen-Cline / Bourke layout.
The 256-case triangle table is taken from scikit-image rather than retyped.
"""
import numpy as np

from skimage.measure._marching_cubes_lewiner import _to_array
from skimage.measure._marching_cubes_lewiner_luts import CASESCLASSIC

TRI_TABLE = np.ascontiguousarray(_to_array(CASESCLASSIC), dtype=np.int64)  # (256, 16), -1 padded

CORNER_OFFSETS = np.array([
    [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
    [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
], dtype=np.int64)

# edge k joins EDGE_LO_CORNER[k] to its +1 neighbour along EDGE_AXIS[k]
EDGE_LO_CORNER = np.array([0, 1, 3, 0, 4, 5, 7, 4, 0, 1, 2, 3], dtype=np.int64)
EDGE_AXIS = np.array([0, 1, 0, 1, 0, 1, 0, 1, 2, 2, 2, 2], dtype=np.int64)


def _corner_step():
    lookup = {tuple(o): i for i, o in enumerate(CORNER_OFFSETS)}
    out = np.full((8, 3), -1, dtype=np.int64)
    for c, off in enumerate(CORNER_OFFSETS):
        for a in range(3):
            nxt = off.copy()
            nxt[a] += 1
            out[c, a] = lookup.get(tuple(nxt), -1)
    return out


CORNER_STEP = _corner_step()
