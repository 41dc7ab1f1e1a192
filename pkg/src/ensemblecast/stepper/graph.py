"""Encoder-processor-decoder graph stepper with hand-written backprop.

Layout of one forward pass (``H`` = latent width):

* embed grid features and mesh node coordinates with MLPs (+ layer norm);
* encoder: grid -> finest mesh, then up the hierarchy level by level;
* processor: ``n_layers`` rounds of intra-level message passing on every level;
* decoder: down the hierarchy, then finest mesh -> grid;
* a Swish MLP reads the grid latent and emits the normalized increment.

Each message-passing block is an interaction network: an edge MLP on
``[h_src, h_dst, edge_offset]``, sum aggregation at the destination, and a
residual update ``h_dst + LayerNorm(aggregate)``.
"""

import numpy as np
from scipy import sparse
from scipy.special import expit

from .. import seeding
from ..errors import ShapeMismatch
from .core import N_CHANNELS

LN_EPS = 1e-5
MESH_FEATURES = 5


class EdgeSet:
    def __init__(self, src, dst, n_src, n_dst, feats):
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.feats = np.asarray(feats, dtype=np.float64)
        E = self.src.size
        cols = np.arange(E)
        self.S = sparse.csr_matrix((np.ones(E), (self.src, cols)), shape=(n_src, E))
        self.D = sparse.csr_matrix((np.ones(E), (self.dst, cols)), shape=(n_dst, E))


def _coords(lat, lon):
    lat, lon = np.deg2rad(lat), np.deg2rad(lon)
    return np.column_stack([np.sin(lat), np.cos(lat), np.sin(lon), np.cos(lon)])


class GraphTopology:
    """Index structures for one (grid, mesh) pair."""

    def __init__(self, grid, mesh):
        lat, lon = grid.mesh()
        sea = grid.sea_mask
        self.grid_pos = np.column_stack([lat[sea], lon[sea]])
        self.n_grid = self.grid_pos.shape[0]
        self.level_res = mesh.level_res
        self.n_levels = len(mesh.levels)
        lat0, lat1, lon0, lon1 = grid.bounds
        extent = np.array([max(lat1 - lat0, 1e-9), max(lon1 - lon0, 1e-9)])
        spacing = [extent / (lv.res - 1) for lv in mesh.levels]
        pos = [lv.positions() for lv in mesh.levels]
        self.n_nodes = [lv.n_nodes for lv in mesh.levels]
        K = self.n_levels
        self.mesh_static = [
            np.column_stack([_coords(lv.lats, lv.lons), np.full(lv.n_nodes, k / max(K - 1, 1))])
            for k, lv in enumerate(mesh.levels)
        ]

        def offsets(src_pos, dst_pos, src, dst, scale):
            return (dst_pos[dst] - src_pos[src]) / scale

        es = {}
        s, d = mesh.g2m_edges
        es["g2m"] = EdgeSet(s, d, self.n_grid, self.n_nodes[0], offsets(self.grid_pos, pos[0], s, d, spacing[0]))
        s, d = mesh.m2g_edges
        es["m2g"] = EdgeSet(s, d, self.n_nodes[0], self.n_grid, offsets(pos[0], self.grid_pos, s, d, spacing[0]))
        for k in range(K):
            s, d = mesh.intra_edges[k]
            es[f"intra{k}"] = EdgeSet(s, d, self.n_nodes[k], self.n_nodes[k], offsets(pos[k], pos[k], s, d, spacing[k]))
        for k in range(K - 1):
            s, d = mesh.up_edges[k]
            es[f"up{k}"] = EdgeSet(s, d, self.n_nodes[k], self.n_nodes[k + 1], offsets(pos[k], pos[k + 1], s, d, spacing[k + 1]))
            s, d = mesh.down_edges[k]
            es[f"down{k}"] = EdgeSet(s, d, self.n_nodes[k + 1], self.n_nodes[k], offsets(pos[k + 1], pos[k], s, d, spacing[k + 1]))
        self.edges = es


# ------------------------------------------------------------- primitives


def _scatter(M, m):
    """Sum rows of ``m`` (B, E, H) into M's rows: (B, N, H)."""
    B, E, H = m.shape
    out = M @ m.transpose(1, 0, 2).reshape(E, B * H)
    return np.ascontiguousarray(out.reshape(M.shape[0], B, H).transpose(1, 0, 2))


def _lin_f(p, name, x):
    return x @ p[name + ".w"] + p[name + ".b"], x


def _lin_b(p, g, name, x, dy):
    x2 = x.reshape(-1, x.shape[-1])
    d2 = dy.reshape(-1, dy.shape[-1])
    g[name + ".w"] += x2.T @ d2
    g[name + ".b"] += d2.sum(axis=0)
    return dy @ p[name + ".w"].T


def _swish_f(x):
    s = expit(x)
    return x * s, (x, s)


def _swish_b(cache, dy):
    x, s = cache
    return dy * (s + x * s * (1.0 - s))


def _ln_f(p, name, x):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * p[name + ".g"] + p[name + ".b"], (xhat, inv)


def _ln_b(p, g, name, cache, dy):
    xhat, inv = cache
    H = xhat.shape[-1]
    g[name + ".g"] += (dy * xhat).reshape(-1, H).sum(axis=0)
    g[name + ".b"] += dy.reshape(-1, H).sum(axis=0)
    dxhat = dy * p[name + ".g"]
    return inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))


def _mlp_f(p, name, x, ln=True):
    h, c1 = _lin_f(p, name + ".l1", x)
    a, c2 = _swish_f(h)
    y, c3 = _lin_f(p, name + ".l2", a)
    c4 = None
    if ln:
        y, c4 = _ln_f(p, name + ".ln", y)
    return y, (c1, c2, c3, c4)


def _mlp_b(p, g, name, cache, dy):
    c1, c2, c3, c4 = cache
    if c4 is not None:
        dy = _ln_b(p, g, name + ".ln", c4, dy)
    da = _lin_b(p, g, name + ".l2", c3, dy)
    dh = _swish_b(c2, da)
    return _lin_b(p, g, name + ".l1", c1, dh)


def _in_f(p, name, es, h_src, h_dst):
    B = h_src.shape[0]
    ef = np.broadcast_to(es.feats, (B, *es.feats.shape))
    e_in = np.concatenate([h_src[:, es.src], h_dst[:, es.dst], ef], axis=-1)
    m, cm = _mlp_f(p, name + ".edge", e_in, ln=False)
    agg = _scatter(es.D, m)
    u, cu = _ln_f(p, name + ".ln", agg)
    return h_dst + u, (cm, cu)


def _in_b(p, g, name, es, cache, dy):
    """Returns (d h_src, d h_dst)."""
    cm, cu = cache
    H = dy.shape[-1]
    d_agg = _ln_b(p, g, name + ".ln", cu, dy)
    d_m = d_agg[:, es.dst]
    d_ein = _mlp_b(p, g, name + ".edge", cm, d_m)
    d_src = _scatter(es.S, np.ascontiguousarray(d_ein[..., :H]))
    d_dst = dy + _scatter(es.D, np.ascontiguousarray(d_ein[..., H : 2 * H]))
    return d_src, d_dst


# ------------------------------------------------------------------ model


def _block_names(n_levels, n_layers):
    names = ["g2m"]
    names += [f"up{k}" for k in range(n_levels - 1)]
    names += [f"proc{l}_{k}" for l in range(n_layers) for k in range(n_levels)]
    names += [f"down{k}" for k in reversed(range(n_levels - 1))]
    names += ["m2g"]
    return names


def _param_shapes(width, n_levels, n_layers):
    H = width
    shapes = {}

    def mlp(name, n_in, n_out, ln=True):
        shapes[name + ".l1.w"] = (n_in, H)
        shapes[name + ".l1.b"] = (H,)
        shapes[name + ".l2.w"] = (H, n_out)
        shapes[name + ".l2.b"] = (n_out,)
        if ln:
            shapes[name + ".ln.g"] = (n_out,)
            shapes[name + ".ln.b"] = (n_out,)

    mlp("grid_embed", N_CHANNELS, H)
    mlp("mesh_embed", MESH_FEATURES, H)
    for name in _block_names(n_levels, n_layers):
        mlp(name + ".edge", 2 * H + 2, H, ln=False)
        shapes[name + ".ln.g"] = (H,)
        shapes[name + ".ln.b"] = (H,)
    mlp("pred", H, 1, ln=False)
    return shapes


class GraphStepper:
    kind = "graph"
    residual = True

    def __init__(self, params, width, n_layers, level_res):
        self.width = int(width)
        self.n_layers = int(n_layers)
        self.level_res = tuple(int(r) for r in level_res)
        shapes = _param_shapes(self.width, len(self.level_res), self.n_layers)
        if set(params) != set(shapes):
            raise ShapeMismatch(f"graph params do not match architecture: {sorted(set(params) ^ set(shapes))}")
        self.params = {}
        for name, shape in shapes.items():
            value = np.array(params[name], dtype=np.float64)
            if value.shape != shape:
                raise ShapeMismatch(f"{name}: shape {value.shape} != {shape}")
            self.params[name] = value

    @classmethod
    def init(cls, seed, width=16, n_layers=2, level_res=(16, 4), pred_scale=0.1):
        gen = seeding.rng(seed)
        params = {}
        for name, shape in _param_shapes(width, len(level_res), n_layers).items():
            if name.endswith(".w"):
                params[name] = gen.standard_normal(shape) / np.sqrt(shape[0])
            elif name.endswith(".g"):
                params[name] = np.ones(shape)
            else:
                params[name] = np.zeros(shape)
        params["pred.l2.w"] *= pred_scale
        return cls(params, width, n_layers, level_res)

    @property
    def meta(self):
        return {"width": self.width, "n_layers": self.n_layers, "level_res": self.level_res}

    def replace(self, params):
        return GraphStepper(params, self.width, self.n_layers, self.level_res)

    def _topology(self, ctx):
        topo = ctx.topology
        if topo.level_res != self.level_res:
            raise ShapeMismatch(f"context mesh {topo.level_res} != model mesh {self.level_res}")
        return topo

    def forward(self, ctx, x):
        p = self.params
        topo = self._topology(ctx)
        sea = ctx.grid.sea_mask
        B = x.shape[0]
        K = topo.n_levels
        caches = {}
        xg = np.ascontiguousarray(x[:, :, sea].transpose(0, 2, 1))
        hg, caches["grid_embed"] = _mlp_f(p, "grid_embed", xg)
        hm = []
        for k in range(K):
            h, caches[f"mesh_embed{k}"] = _mlp_f(p, "mesh_embed", topo.mesh_static[k])
            hm.append(np.broadcast_to(h, (B, *h.shape)).copy())
        hm[0], caches["g2m"] = _in_f(p, "g2m", topo.edges["g2m"], hg, hm[0])
        for k in range(K - 1):
            hm[k + 1], caches[f"up{k}"] = _in_f(p, f"up{k}", topo.edges[f"up{k}"], hm[k], hm[k + 1])
        for layer in range(self.n_layers):
            for k in range(K):
                name = f"proc{layer}_{k}"
                hm[k], caches[name] = _in_f(p, name, topo.edges[f"intra{k}"], hm[k], hm[k])
        for k in reversed(range(K - 1)):
            hm[k], caches[f"down{k}"] = _in_f(p, f"down{k}", topo.edges[f"down{k}"], hm[k + 1], hm[k])
        hg, caches["m2g"] = _in_f(p, "m2g", topo.edges["m2g"], hm[0], hg)
        out, caches["pred"] = _mlp_f(p, "pred", hg, ln=False)
        inc = np.zeros((B, *ctx.grid.shape))
        inc[:, sea] = out[..., 0]
        return inc, caches

    def backward(self, ctx, caches, d_inc):
        p = self.params
        topo = self._topology(ctx)
        sea = ctx.grid.sea_mask
        K = topo.n_levels
        g = {name: np.zeros_like(v) for name, v in p.items()}
        d_out = d_inc[:, sea][..., None]
        d_hg = _mlp_b(p, g, "pred", caches["pred"], d_out)
        d_m0, d_hg = _in_b(p, g, "m2g", topo.edges["m2g"], caches["m2g"], d_hg)
        d_hm = [None] * K
        d_hm[0] = d_m0
        for k in range(1, K):
            d_hm[k] = np.zeros((d_m0.shape[0], topo.n_nodes[k], d_m0.shape[2]))
        for k in range(K - 1):
            d_src, d_dst = _in_b(p, g, f"down{k}", topo.edges[f"down{k}"], caches[f"down{k}"], d_hm[k])
            d_hm[k] = d_dst
            d_hm[k + 1] = d_hm[k + 1] + d_src
        for layer in reversed(range(self.n_layers)):
            for k in reversed(range(K)):
                name = f"proc{layer}_{k}"
                d_src, d_dst = _in_b(p, g, name, topo.edges[f"intra{k}"], caches[name], d_hm[k])
                d_hm[k] = d_src + d_dst
        for k in reversed(range(K - 1)):
            d_src, d_dst = _in_b(p, g, f"up{k}", topo.edges[f"up{k}"], caches[f"up{k}"], d_hm[k + 1])
            d_hm[k + 1] = d_dst
            d_hm[k] = d_hm[k] + d_src
        d_hg_enc, d_hm[0] = _in_b(p, g, "g2m", topo.edges["g2m"], caches["g2m"], d_hm[0])
        d_hg = d_hg + d_hg_enc
        for k in range(K):
            _mlp_b(p, g, "mesh_embed", caches[f"mesh_embed{k}"], d_hm[k].sum(axis=0))
        _mlp_b(p, g, "grid_embed", caches["grid_embed"], d_hg)
        return g
