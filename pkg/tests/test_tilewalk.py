import os
import subprocess
import sys

import numpy as np
import pytest

from cuspscatter import tilewalk
from cuspscatter.geodesics import enumerate_scattered, horoball_candidates
from cuspscatter.surfaces import builtin_surface
from cuspscatter.tilewalk import WalkBudgetExceeded

compiled_only = pytest.mark.skipif(tilewalk._compiled is None, reason="compiled kernel not built")


@compiled_only
@pytest.mark.parametrize("name,pair,t_max", [("pentagon2", (1, 2), 7.0), ("pentagon2", (1, 1), 6.0),
                                             ("pentagon1", (1, 1), 6.0)])
def test_backends_agree(request, name, pair, t_max):
    spec = request.getfixturevalue(name)
    fast = horoball_candidates(spec, *pair, t_max, backend="compiled")[2]
    slow = horoball_candidates(spec, *pair, t_max, backend="python")[2]
    assert np.array_equal(fast.tiles, slow.tiles)
    assert np.array_equal(fast.parents, slow.parents)
    assert np.array_equal(fast.depths, slow.depths)
    assert np.array_equal(fast.mats, slow.mats)


@compiled_only
def test_backends_give_same_classes(pentagon2):
    fast = enumerate_scattered(pentagon2, 2, 2, 6.0, backend="compiled")
    slow = enumerate_scattered(pentagon2, 2, 2, 6.0, backend="python")
    assert [r.homotopy_id for r in fast] == [r.homotopy_id for r in slow]


def test_unknown_backend(pentagon1):
    with pytest.raises(ValueError):
        horoball_candidates(pentagon1, 1, 1, 2.0, backend="gpu")


@pytest.mark.parametrize("backend", ["python"] + (["compiled"] if tilewalk._compiled else []))
def test_budget_raises(pentagon2, backend):
    with pytest.raises(WalkBudgetExceeded):
        horoball_candidates(pentagon2, 1, 2, 8.0, budget=50, backend=backend)


def test_walk_grows_with_t_max(pentagon1):
    sizes = [len(horoball_candidates(pentagon1, 1, 1, t)[2]) for t in (2.0, 4.0, 6.0)]
    assert sizes == sorted(sizes)


def test_fallback_selected_by_environment():
    env = dict(os.environ, CUSPSCATTER_PURE_PYTHON="1")
    code = "import cuspscatter.tilewalk as t; print(t.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("ell", [0.3, 0.4, 0.55])
def test_walk_stays_local_for_other_collar_lengths(ell):
    # parabolic translates built from generator products carry rounding-level
    # entries; the walk must still see their cusp vertex at infinity
    spec = builtin_surface("pentagon2", ell=ell)
    for pair in [(1, 1), (1, 2), (2, 1), (2, 2)]:
        res = horoball_candidates(spec, *pair, 6.0, budget=5000)[2]
        assert len(res) < 1000
        if tilewalk._compiled is not None:
            slow = horoball_candidates(spec, *pair, 6.0, backend="python")[2]
            assert np.array_equal(res.tiles, slow.tiles)
