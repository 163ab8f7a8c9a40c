"""Breadth-first walk over the tiles of a cusp-surface tiling.

The walk starts from one tile, crosses sides using the side-pairing table
and keeps every tile that reaches above height ``eps`` and comes within a
cone of slope ``cone`` (capped at height ``ymax``) of the band
``lo <= x <= hi``.  The compiled kernel is used when it imports; set
``CUSPSCATTER_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _tilewalk_py

try:
    if os.environ.get("CUSPSCATTER_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure Python requested")
    from . import _tilewalk as _compiled
except ImportError:
    _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
DEFAULT_BUDGET = 5_000_000


class WalkBudgetExceeded(RuntimeError):
    """The tile walk needed more tiles than its budget allows."""


@dataclass(frozen=True)
class TilingArrays:
    """Flat arrays describing the prototiles and their side pairings.

    Vertex arrays are padded to the largest vertex count.  ``nb_code[k, s]``
    is the signed generator code of the pairing across side ``s`` of tile
    ``k`` (``0`` for the identity), used to spell group words.

    ``compact`` describes each prototile with its cusp spike removed:
    ``(chains, tau, hcut, lx)`` where ``chains[k]`` lists the base-chart
    points from one horocycle cut point around the finite vertices to the
    other, ``tau[k]`` is the cusp chart of the tile, ``hcut[k]`` the cut
    height in that chart and ``lx[k]`` the chart abscissae of the cut points.
    """

    vx: np.ndarray
    vy: np.ndarray
    vinf: np.ndarray
    nverts: np.ndarray
    nb_mat: np.ndarray
    nb_tile: np.ndarray
    nb_code: np.ndarray
    ix: np.ndarray
    iy: np.ndarray
    compact: Optional[tuple] = None


@dataclass(frozen=True)
class WalkResult:
    mats: np.ndarray
    tiles: np.ndarray
    parents: np.ndarray
    sides: np.ndarray
    depths: np.ndarray
    backend: str

    def __len__(self):
        return len(self.tiles)

    def word(self, index: int, arrays: TilingArrays) -> tuple:
        """Group word (signed generator codes) leading from the root tile to tile ``index``."""
        out = []
        while self.parents[index] >= 0:
            parent = int(self.parents[index])
            code = int(arrays.nb_code[self.tiles[parent], self.sides[index]])
            if code:
                out.append(code)
            index = parent
        return tuple(reversed(out))


def walk_tiles(arrays: TilingArrays, start_mat, start_tile: int, eps: float,
               lo: float, hi: float, cone: float = 0.0, ymax: float = math.inf,
               budget: int = DEFAULT_BUDGET, backend: str | None = None,
               compact: bool = False) -> WalkResult:
    """Run the tile walk and return the kept tiles.

    With ``compact`` the height test ignores cusp spikes, which is enough to
    reach every horoball top above ``eps`` and avoids walking down the spikes.

    Raises
    ------
    WalkBudgetExceeded
        When more than ``budget`` tiles would be kept.
    """
    backend = backend or BACKEND
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled tile walk is not available")
        kernel = _compiled.walk
    elif backend == "python":
        kernel = _tilewalk_py.walk
    else:
        raise ValueError(f"unknown backend {backend!r}")
    mats, tiles, parents, sides, depths, status = kernel(
        arrays.vx, arrays.vy, arrays.vinf, arrays.nverts, arrays.nb_mat, arrays.nb_tile,
        arrays.ix, arrays.iy, np.asarray(start_mat, dtype=float), int(start_tile),
        float(eps), float(lo), float(hi), float(cone), float(ymax), int(budget),
        arrays.compact if compact else None)
    if status:
        raise WalkBudgetExceeded(f"tile walk exceeded its budget of {budget} tiles")
    return WalkResult(mats, tiles, parents, sides, depths, backend)
