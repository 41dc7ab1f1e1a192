import csv
from collections import deque

import numpy as np
import pytest

from ensemblecast.errors import BadLevelSpec
from ensemblecast.griddata import regular_grid
from ensemblecast.mesh import build_hier_mesh, connect_grid_mesh, dump_edges, k_nearest


def test_default_levels(grid32):
    mesh = build_hier_mesh(grid32, (81, 27, 9))
    assert [lv.n_nodes for lv in mesh.levels] == [81**2, 27**2, 9**2]
    assert len(mesh.up_edges) == len(mesh.down_edges) == 2


def test_three_by_three_degrees(grid32):
    mesh = build_hier_mesh(grid32, (3,))
    deg = mesh.degrees(0).reshape(3, 3)
    assert deg[1, 1] == 8
    assert deg[0, 0] == deg[0, 2] == deg[2, 0] == deg[2, 2] == 3
    assert deg[0, 1] == deg[1, 0] == 5


@pytest.mark.parametrize("spec", [(9, 27), (4, 4), (1,), (), (8, 1)])
def test_bad_level_spec(grid32, spec):
    with pytest.raises(BadLevelSpec):
        build_hier_mesh(grid32, spec)


@pytest.mark.parametrize("res", [2, 5, 16])
def test_degree_histogram(grid32, res):
    deg = build_hier_mesh(grid32, (res,)).degrees(0).reshape(res, res)
    assert np.all(deg[1:-1, 1:-1] == 8)
    edges = np.concatenate([deg[0, 1:-1], deg[-1, 1:-1], deg[1:-1, 0], deg[1:-1, -1]])
    assert np.all(edges == 5)
    assert sorted(deg[[0, 0, -1, -1], [0, -1, 0, -1]]) == [3, 3, 3, 3]


def test_intra_edges_are_symmetric(grid32):
    mesh = build_hier_mesh(grid32, (6, 3))
    for e in mesh.intra_edges:
        fwd = set(map(tuple, e.T))
        assert fwd == {(d, s) for s, d in fwd}


def test_inter_level_edges(grid32):
    mesh = build_hier_mesh(grid32, (16, 4, 2))
    for k, (up, down) in enumerate(zip(mesh.up_edges, mesh.down_edges)):
        fine, coarse = mesh.levels[k], mesh.levels[k + 1]
        assert np.array_equal(np.sort(np.unique(up[0])), np.arange(fine.n_nodes))
        assert up[1].max() < coarse.n_nodes
        assert set(map(tuple, up.T)) == {(d, s) for s, d in down.T}


def test_every_sea_cell_is_linked(grid32):
    mesh = build_hier_mesh(grid32, (16, 4))
    n_sea = grid32.n_sea
    assert set(mesh.g2m_edges[0]) == set(range(n_sea))
    assert set(mesh.m2g_edges[1]) == set(range(n_sea))
    assert np.all(np.bincount(mesh.g2m_edges[0]) == 4)


def test_all_sea_two_by_two():
    grid = regular_grid(2, 2, bounds=(0, 1, 0, 1))
    mesh = build_hier_mesh(grid, (2,))
    g2m, m2g = connect_grid_mesh(grid, mesh)
    assert set(map(tuple, g2m.T)) == {(c, n) for c in range(4) for n in range(4)}
    assert set(map(tuple, m2g.T)) == {(n, c) for c in range(4) for n in range(4)}


def test_land_cells_have_no_links():
    mask = np.array([[True, False, True], [True, True, False]])
    grid = regular_grid(2, 3, bounds=(0, 1, 0, 2), sea_mask=mask)
    mesh = build_hier_mesh(grid, (3, 2))
    assert mesh.g2m_edges[0].max() == grid.n_sea - 1
    assert mesh.m2g_edges[1].max() == grid.n_sea - 1


def test_cell_on_a_node_picks_it_first():
    points = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    nbr = k_nearest(points, np.array([[1.0, 0.0], [0.5, 0.5]]), 4)
    assert nbr[0, 0] == 2
    # equidistant: ties broken by node index
    assert list(nbr[1]) == [0, 1, 2, 3]


def test_reachability(grid32):
    mesh = build_hier_mesh(grid32, (16, 4, 2))
    offsets = np.cumsum([0] + [lv.n_nodes for lv in mesh.levels])
    adj = {}
    for k, e in enumerate(mesh.intra_edges):
        for s, d in e.T:
            adj.setdefault(offsets[k] + s, []).append(offsets[k] + d)
    for k, e in enumerate(mesh.up_edges):
        for s, d in e.T:
            adj.setdefault(offsets[k] + s, []).append(offsets[k + 1] + d)
    start = set(mesh.g2m_edges[1])
    seen, todo = set(start), deque(start)
    while todo:
        for nxt in adj.get(todo.popleft(), []):
            if nxt not in seen:
                seen.add(nxt)
                todo.append(nxt)
    assert seen == set(range(offsets[-1]))


def test_deterministic(grid32):
    a = build_hier_mesh(grid32, (16, 4))
    b = build_hier_mesh(grid32, (16, 4))
    for x, y in zip(a.intra_edges + a.up_edges + [a.g2m_edges], b.intra_edges + b.up_edges + [b.g2m_edges]):
        np.testing.assert_array_equal(x, y)


def test_dump_edges(tmp_path, grid32):
    mesh = build_hier_mesh(grid32, (4, 2))
    dump_edges(mesh, tmp_path)
    with open(tmp_path / "intra.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["level", "src", "dst"]
    assert len(rows) - 1 == sum(e.shape[1] for e in mesh.intra_edges)
    for name in ("up", "down", "g2m", "m2g"):
        assert (tmp_path / f"{name}.csv").exists()
