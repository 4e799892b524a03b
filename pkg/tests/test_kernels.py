from __future__ import annotations

import importlib.util
import os
import subprocess
import sys
from pathlib import Path

import networkx as nx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sovereign_edge import kernels
from sovereign_edge.kernels import python_backend as py
from sovereign_edge.threatgraph import NetworkGraph

compiled = kernels.compiled_backend
needs_compiled = pytest.mark.skipif(compiled is None, reason="extension not built")


@st.composite
def digraphs(draw, max_n=12):
    n = draw(st.integers(1, max_n))
    edges = draw(st.sets(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1))
                         .filter(lambda e: e[0] != e[1]), max_size=n * 4))
    return NetworkGraph.from_edges(n, sorted(edges))


def test_splitmix64_reference_outputs():
    # published reference stream for state 0
    state, outs = 0, []
    for _ in range(3):
        state, x = py.splitmix64(state)
        outs.append(x)
    assert outs == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


@needs_compiled
@given(st.integers(0, (1 << 64) - 1))
def test_splitmix64_backends_agree(state):
    assert compiled.splitmix64(state) == py.splitmix64(state)


@given(digraphs(), st.data())
def test_reach_closure_matches_networkx(g, data):
    seeds = data.draw(st.lists(st.sampled_from(range(len(g))), min_size=1, max_size=3))
    indptr, indices = g.csr()
    mask = kernels.reach_closure(indptr, indices, np.array(seeds, dtype=np.int64))
    nxg = nx.DiGraph(g.edges())
    nxg.add_nodes_from(range(len(g)))
    expect = set(seeds).union(*(nx.descendants(nxg, s) for s in seeds))
    assert set(np.flatnonzero(mask)) == expect


@needs_compiled
@given(digraphs(), st.integers(0, 1), st.sampled_from([1 << 53, 1 << 52, 1 << 50]),
       st.integers(0, 2**64 - 1))
def test_worm_spread_backends_agree(g, scan, p, seed):
    indptr, indices = g.csr()
    seeds = np.array([0], dtype=np.int64)
    a = compiled.worm_spread(indptr, indices, seeds, scan, p, 4, seed, 10_000)
    b = py.worm_spread(indptr, indices, seeds, scan, p, 4, seed, 10_000)
    assert a[1] == b[1] and np.array_equal(a[0], b[0])


@given(digraphs(max_n=8), st.data())
def test_simple_paths_match_networkx(g, data):
    s = data.draw(st.integers(0, len(g) - 1))
    t = data.draw(st.integers(0, len(g) - 1))
    got = kernels.simple_paths(g.bitmasks(), s, t, 1 << 62)
    nxg = nx.DiGraph(g.edges())
    nxg.add_nodes_from(range(len(g)))
    want = [] if s == t else sorted(tuple(p) for p in nx.all_simple_paths(nxg, s, t))
    assert got == want


@needs_compiled
@given(st.lists(st.lists(st.integers(0, 63), min_size=6, max_size=6), min_size=1, max_size=20))
def test_path_census_backends_agree(rows):
    adj = np.array(rows, dtype=np.uint64)
    for i in range(6):
        adj[:, i] &= ~np.uint64(1 << i)
    a = compiled.path_census(adj, 0, 5)
    b = py.path_census(adj, 0, 5)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_backend_selection():
    assert kernels.BACKEND_NAME in ("compiled", "python")
    if compiled is not None:
        assert kernels.backend is compiled


def test_fallback_selected_by_environment():
    env = dict(os.environ, SOVEREIGN_EDGE_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "from sovereign_edge import kernels; print(kernels.BACKEND_NAME)"],
        env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_compiled
def test_benchmark_smoke(capsys):
    path = Path(__file__).parents[1] / "benchmarks" / "bench_kernels.py"
    module_spec = importlib.util.spec_from_file_location("bench_kernels", path)
    bench = importlib.util.module_from_spec(module_spec)
    module_spec.loader.exec_module(bench)
    assert bench.main(["--quick", "--repeat", "1"]) == 0
    assert "path_census" in capsys.readouterr().out
