"""Hierarchical lat/lon mesh and its bipartite links to the grid.

Level ``k`` is a uniform ``n_k x n_k`` lattice spanning the grid bounding box
(land included). Edges are (src, dst) index arrays in canonical sorted order.
"""

import csv
import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import BadLevelSpec


@dataclass(frozen=True, eq=False)
class MeshLevel:
    res: int
    lats: np.ndarray  # (res*res,)
    lons: np.ndarray

    @property
    def n_nodes(self):
        return self.lats.size

    def positions(self):
        return np.column_stack([self.lats, self.lons])


@dataclass(frozen=True, eq=False)
class HierMesh:
    levels: list
    intra_edges: list  # per level: (2, E) array of (src, dst)
    up_edges: list  # level k -> k+1 (fine -> coarse)
    down_edges: list  # level k+1 -> k (coarse -> fine)
    g2m_edges: np.ndarray = None  # (2, E): sea-cell index -> finest node
    m2g_edges: np.ndarray = None  # (2, E): finest node -> sea-cell index

    @property
    def level_res(self):
        return tuple(level.res for level in self.levels)

    def degrees(self, level):
        return np.bincount(self.intra_edges[level][1], minlength=self.levels[level].n_nodes)


def _lattice(grid, res):
    lat0, lat1, lon0, lon1 = grid.bounds
    lat, lon = np.meshgrid(np.linspace(lat0, lat1, res), np.linspace(lon0, lon1, res), indexing="ij")
    return MeshLevel(res, lat.ravel(), lon.ravel())


def _king_edges(res):
    ii, jj = np.meshgrid(np.arange(res), np.arange(res), indexing="ij")
    src, dst = [], []
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == dj == 0:
                continue
            ok = (ii + di >= 0) & (ii + di < res) & (jj + dj >= 0) & (jj + dj < res)
            src.append(((ii + di) * res + (jj + dj))[ok])
            dst.append((ii * res + jj)[ok])
    return _canonical(np.concatenate(src), np.concatenate(dst))


def _canonical(src, dst):
    order = np.lexsort((src, dst))
    return np.stack([src[order], dst[order]]).astype(np.int64)


def k_nearest(points, queries, k):
    """Indices of the ``k`` nearest points per query; ties go to the lower index."""
    k = min(k, len(points))
    tree = cKDTree(points)
    # over-fetch so exact distance ties can be re-ordered by index
    kk = min(len(points), 2 * k + 4)
    dist, idx = tree.query(queries, k=kk)
    dist = np.atleast_2d(dist).reshape(len(queries), kk)
    idx = np.atleast_2d(idx).reshape(len(queries), kk)
    d2 = ((points[idx] - queries[:, None, :]) ** 2).sum(-1)
    order = np.lexsort((idx, d2), axis=-1)
    return np.take_along_axis(idx, order, axis=-1)[:, :k]


def build_hier_mesh(grid, level_res):
    level_res = tuple(int(r) for r in level_res)
    if not level_res or any(r < 2 for r in level_res):
        raise BadLevelSpec(f"every level needs >= 2 nodes per side, got {level_res}")
    if any(b >= a for a, b in zip(level_res, level_res[1:])):
        raise BadLevelSpec(f"level resolutions must be strictly decreasing, got {level_res}")
    levels = [_lattice(grid, r) for r in level_res]
    intra = [_king_edges(r) for r in level_res]
    up, down = [], []
    for fine, coarse in zip(levels, levels[1:]):
        parent = k_nearest(coarse.positions(), fine.positions(), 1)[:, 0]
        child = np.arange(fine.n_nodes)
        up.append(_canonical(child, parent))
        down.append(_canonical(parent, child))
    mesh = HierMesh(levels, intra, up, down)
    g2m, m2g = connect_grid_mesh(grid, mesh)
    object.__setattr__(mesh, "g2m_edges", g2m)
    object.__setattr__(mesh, "m2g_edges", m2g)
    return mesh


def connect_grid_mesh(grid, mesh, k=4):
    """Bipartite edges between sea cells and the finest mesh level.

    Sea cells are numbered in row-major order of the sea mask.
    """
    lat, lon = grid.mesh()
    sea = grid.sea_mask
    cells = np.column_stack([lat[sea], lon[sea]])
    nbr = k_nearest(mesh.levels[0].positions(), cells, k)
    cell_idx = np.repeat(np.arange(len(cells)), nbr.shape[1])
    node_idx = nbr.ravel()
    return _canonical(cell_idx, node_idx), _canonical(node_idx, cell_idx)


def dump_edges(mesh, directory):
    """Write one ``level,src,dst`` CSV per edge family for inspection."""
    os.makedirs(directory, exist_ok=True)
    families = {
        "intra": list(enumerate(mesh.intra_edges)),
        "up": list(enumerate(mesh.up_edges)),
        "down": list(enumerate(mesh.down_edges)),
        "g2m": [(0, mesh.g2m_edges)],
        "m2g": [(0, mesh.m2g_edges)],
    }
    for name, items in families.items():
        with open(os.path.join(directory, f"{name}.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["level", "src", "dst"])
            for level, edges in items:
                for s, d in edges.T:
                    writer.writerow([level, int(s), int(d)])
