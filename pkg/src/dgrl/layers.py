"""Message-passing direction expansion and the layer zoo.

Direction handling: ``plane`` sends each edge both ways under one
parameter set, ``directed`` follows forward edges only, ``bidirected``
runs forward and reverse branches with distinct parameters and combines
them (mean by default).  Message transforms are per branch; update
functions are shared, so bidirected with combine=sum and tied branch
parameters reproduces plane exactly.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .errors import InvalidSpec, NodeCapExceeded, ShapeMismatch

GPS_NODE_CAP = 5000
LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class DirectionMode:
    mode: str = "plane"               # plane | directed | bidirected
    combine: Optional[str] = None     # mean | sum, bidirected only

    def __post_init__(self):
        if self.mode not in ("plane", "directed", "bidirected"):
            raise InvalidSpec(f"unknown direction mode {self.mode!r}")
        if self.mode == "bidirected":
            if self.combine is None:
                object.__setattr__(self, "combine", "mean")
            if self.combine not in ("mean", "sum"):
                raise InvalidSpec(f"unknown combine {self.combine!r}")
        elif self.combine is not None:
            raise InvalidSpec(f"combine only applies to bidirected, got {self.mode}")

    @property
    def tags(self):
        if self.mode == "plane":
            return ("shared",)
        if self.mode == "directed":
            return ("forward",)
        return ("forward", "reverse")


def expand_direction(g, mode):
    """Branch message lists as (edges [m x 2], parameter tag) pairs."""
    e = g.edges
    if mode.mode == "plane":
        return [(np.vstack([e, e[:, ::-1]]), "shared")]
    if mode.mode == "directed":
        return [(e.copy(), "forward")]
    return [(e.copy(), "forward"), (e[:, ::-1].copy(), "reverse")]


def branch_edge_features(raw, mode):
    """Per-branch edge feature rows aligned with expand_direction output.

    Reversing an edge keeps its feature row; the plane branch stacks the
    rows twice (one per message direction).
    """
    if raw is None:
        return [None for _ in mode.tags]
    if mode.mode == "plane":
        return [np.vstack([raw, raw])]
    if mode.mode == "directed":
        return [raw]
    return [raw, raw]


def _combine(parts, mode):
    if len(parts) == 1:
        return parts[0]
    total = parts[0]
    for p in parts[1:]:
        total = ad.add(total, p)
    if mode.combine == "mean":
        total = ad.scale(total, 1.0 / len(parts))
    return total


def segment_softmax(scores, dst, num_nodes):
    """Softmax over messages grouped by destination; exact, tape-friendly.

    The per-segment max is detached — a constant shift never changes
    softmax values or gradients.
    """
    seg_max = np.full((num_nodes,) + scores.shape[1:], -np.inf)
    np.maximum.at(seg_max, dst, scores.values)
    seg_max[np.isneginf(seg_max)] = 0.0
    ex = ad.exp(ad.sub(scores, ad.Tensor(seg_max[dst])))
    denom = ad.scatter_add(ex, dst, num_nodes)
    return ad.div(ex, ad.gather(denom, dst))


class GINLayer:
    """Sum aggregation with a per-branch linear message transform and one
    shared update MLP; the edge variant rectifies x_src + e per message."""

    def __init__(self, store, prefix, h, mode, edge_dim=0):
        self.mode = mode
        self.edge_dim = edge_dim
        self.msg = {tag: store.weight(f"{prefix}.msg.{tag}", (h, h))
                    for tag in mode.tags}
        if edge_dim:
            self.edge_proj = store.weight(f"{prefix}.edge", (edge_dim, h))
            self.edge_bias = store.bias(f"{prefix}.edge_b", (h,))
        self.update = ad.MLP(store, f"{prefix}.update", (h, h, h))

    def forward(self, x, branches, edge_feats=None, drop=None):
        n = x.shape[0]
        parts = []
        for i, (edges, tag) in enumerate(branches):
            src, dst = edges[:, 0], edges[:, 1]
            msgs = ad.gather(x, src)
            if self.edge_dim:
                e = edge_feats[i]
                if e is None or e.shape[0] != edges.shape[0]:
                    raise ShapeMismatch("edge features missing or misaligned")
                proj = ad.add(ad.matmul(ad.as_tensor(e), self.edge_proj),
                              self.edge_bias)
                msgs = ad.relu(ad.add(msgs, proj))
            agg = ad.scatter_add(msgs, dst, n)
            parts.append(ad.matmul(agg, self.msg[tag]))
        return self.update(ad.add(x, _combine(parts, self.mode)), drop=drop)


class GCNLayer:
    """Symmetric-normalized convolution with self-loops per branch.

    Branch degree d̂ counts that branch's incoming messages plus the
    self-loop; optional edge weights (1 + linear projection of the edge
    features) scale the cross terms only.
    """

    def __init__(self, store, prefix, h, mode, edge_dim=0):
        self.mode = mode
        self.edge_dim = edge_dim
        self.theta = {tag: store.weight(f"{prefix}.theta.{tag}", (h, h))
                      for tag in mode.tags}
        self.bias = {tag: store.bias(f"{prefix}.bias.{tag}", (h,))
                     for tag in mode.tags}
        if edge_dim:
            self.weight_proj = store.weight(f"{prefix}.edge", (edge_dim, 1))

    def forward(self, x, branches, edge_feats=None, drop=None):
        n = x.shape[0]
        parts = []
        for i, (edges, tag) in enumerate(branches):
            src, dst = edges[:, 0], edges[:, 1]
            deg = np.bincount(dst, minlength=n).astype(np.float64) + 1.0
            coeff = 1.0 / np.sqrt(deg[src] * deg[dst])
            msgs = ad.mul(ad.gather(x, src), ad.Tensor(coeff.reshape(-1, 1)))
            if self.edge_dim:
                e = edge_feats[i]
                if e is None or e.shape[0] != edges.shape[0]:
                    raise ShapeMismatch("edge features missing or misaligned")
                w = ad.add(ad.matmul(ad.as_tensor(e), self.weight_proj),
                           ad.Tensor(np.ones((edges.shape[0], 1))))
                msgs = ad.mul(msgs, w)
            agg = ad.scatter_add(msgs, dst, n)
            self_term = ad.mul(x, ad.Tensor((1.0 / deg).reshape(-1, 1)))
            agg = ad.add(agg, self_term)
            parts.append(ad.add(ad.matmul(agg, self.theta[tag]), self.bias[tag]))
        return _combine(parts, self.mode)


class GATLayer:
    """Multi-head attention over each node's in-neighborhood plus itself.

    Scores: LeakyReLU(a_s . theta_s x_dst + a_t . theta_t x_src
    [+ a_e . theta_e e]); the self message's value is theta_s x_i, so a
    node whose softmax support is only itself returns exactly that.
    """

    def __init__(self, store, prefix, h, mode, heads=4, edge_dim=0):
        if h % heads:
            raise InvalidSpec(f"hidden dim {h} not divisible by {heads} heads")
        self.mode = mode
        self.heads = heads
        self.dh = h // heads
        self.h = h
        self.edge_dim = edge_dim
        self.p = {}
        for tag in mode.tags:
            branch = {
                "theta_s": store.weight(f"{prefix}.{tag}.theta_s", (h, h)),
                "theta_t": store.weight(f"{prefix}.{tag}.theta_t", (h, h)),
                "a_s": store.weight(f"{prefix}.{tag}.a_s", (h,), fan=(h, 1)),
                "a_t": store.weight(f"{prefix}.{tag}.a_t", (h,), fan=(h, 1)),
            }
            if edge_dim:
                branch["theta_e"] = store.weight(f"{prefix}.{tag}.theta_e",
                                                 (edge_dim, h))
                branch["a_e"] = store.weight(f"{prefix}.{tag}.a_e", (h,), fan=(h, 1))
            self.p[tag] = branch

    def _head_scores(self, projected, vec):
        cube = ad.reshape(projected, (projected.shape[0], self.heads, self.dh))
        return ad.tensor_sum(ad.mul(cube, ad.reshape(vec, (1, self.heads, self.dh))),
                             axis=2)

    def _branch_attention(self, x, edges, tag, e):
        """Coefficients, message values and destinations, self-loops last."""
        n = x.shape[0]
        p = self.p[tag]
        src, dst = edges[:, 0], edges[:, 1]
        xs = ad.matmul(x, p["theta_s"])
        xt = ad.matmul(x, p["theta_t"])
        s_dst = self._head_scores(xs, p["a_s"])     # [n, H]
        s_src = self._head_scores(xt, p["a_t"])
        msg_scores = ad.add(ad.gather(s_dst, dst), ad.gather(s_src, src))
        if self.edge_dim:
            if e is None or e.shape[0] != edges.shape[0]:
                raise ShapeMismatch("edge features missing or misaligned")
            ep = ad.matmul(ad.as_tensor(e), p["theta_e"])
            msg_scores = ad.add(msg_scores, self._head_scores(ep, p["a_e"]))
        self_scores = ad.add(s_dst, s_src)
        scores = ad.leaky_relu(ad.concat([msg_scores, self_scores], axis=0),
                               LEAKY_SLOPE)
        dst_full = np.concatenate([dst, np.arange(n)])
        alpha = segment_softmax(scores, dst_full, n)
        vals_msg = ad.reshape(ad.gather(xt, src), (len(src), self.heads, self.dh))
        vals_self = ad.reshape(xs, (n, self.heads, self.dh))
        vals = ad.concat([vals_msg, vals_self], axis=0)
        return alpha, vals, dst_full

    def coefficient_sums(self, x, branches, edge_feats=None):
        """Per-branch [n x heads] attention mass by destination (should be 1)."""
        n = x.shape[0]
        sums = []
        for i, (edges, tag) in enumerate(branches):
            e = None if edge_feats is None else edge_feats[i]
            alpha, _, dst_full = self._branch_attention(x, edges, tag, e)
            sums.append(ad.scatter_add(alpha, dst_full, n).values)
        return sums

    def forward(self, x, branches, edge_feats=None, drop=None):
        n = x.shape[0]
        parts = []
        for i, (edges, tag) in enumerate(branches):
            e = None if edge_feats is None else edge_feats[i]
            alpha, vals, dst_full = self._branch_attention(x, edges, tag, e)
            weighted = ad.mul(vals, ad.reshape(alpha, (alpha.shape[0], self.heads, 1)))
            out = ad.scatter_add(weighted, dst_full, n)
            parts.append(ad.reshape(out, (n, self.h)))
        return _combine(parts, self.mode)


def complex_relu_mask(re_values, im_values):
    """Keep entries whose complex argument lies in [-pi/2, pi/2)."""
    return ((re_values > 0) | ((re_values == 0) & (im_values < 0))).astype(np.float64)


class MagNetLayer:
    """First-order spectral propagation X' = sigma((I - L_q) X W + b).

    Weights are complex (paired real arrays); the single real bias is
    added to both parts, keeping its real and imaginary parts equal.
    """

    def __init__(self, store, prefix, h_in, h_out):
        self.wr = store.weight(f"{prefix}.Wr", (h_in, h_out))
        self.wi = store.weight(f"{prefix}.Wi", (h_in, h_out))
        self.b = store.bias(f"{prefix}.b", (h_out,))

    def forward(self, prop_re, prop_im, xr, xi):
        pxr = ad.sub(ad.matmul(prop_re, xr), ad.matmul(prop_im, xi))
        pxi = ad.add(ad.matmul(prop_re, xi), ad.matmul(prop_im, xr))
        yr = ad.add(ad.sub(ad.matmul(pxr, self.wr), ad.matmul(pxi, self.wi)), self.b)
        yi = ad.add(ad.add(ad.matmul(pxr, self.wi), ad.matmul(pxi, self.wr)), self.b)
        mask = ad.Tensor(complex_relu_mask(yr.values, yi.values))
        return ad.mul(yr, mask), ad.mul(yi, mask)


class AttentionLayer:
    """Dense scaled dot-product multi-head attention with optional
    pre-softmax bias [H x n x n]."""

    def __init__(self, store, prefix, h, heads=4):
        if h % heads:
            raise InvalidSpec(f"hidden dim {h} not divisible by {heads} heads")
        self.heads = heads
        self.dh = h // heads
        self.h = h
        self.wq = store.weight(f"{prefix}.Wq", (h, h))
        self.bq = store.bias(f"{prefix}.bq", (h,))
        self.wk = store.weight(f"{prefix}.Wk", (h, h))
        self.bk = store.bias(f"{prefix}.bk", (h,))
        self.wv = store.weight(f"{prefix}.Wv", (h, h))
        self.bv = store.bias(f"{prefix}.bv", (h,))
        self.wo = store.weight(f"{prefix}.Wo", (h, h))
        self.bo = store.bias(f"{prefix}.bo", (h,))

    def _split(self, x, w, b, axes):
        n = x.shape[0]
        proj = ad.add(ad.matmul(x, w), b)
        return ad.transpose(ad.reshape(proj, (n, self.heads, self.dh)), axes)

    def forward(self, x, bias=None, node_cap=GPS_NODE_CAP):
        n = x.shape[0]
        if n > node_cap:
            raise NodeCapExceeded(f"attention on {n} nodes exceeds cap {node_cap}")
        q = self._split(x, self.wq, self.bq, (1, 0, 2))       # [H, n, dh]
        k = self._split(x, self.wk, self.bk, (1, 2, 0))       # [H, dh, n]
        v = self._split(x, self.wv, self.bv, (1, 0, 2))
        logits = ad.scale(ad.matmul(q, k), 1.0 / np.sqrt(self.dh))
        if bias is not None:
            logits = ad.add(logits, bias)
        att = ad.softmax(logits, axis=-1)
        mixed = ad.transpose(ad.matmul(att, v), (1, 0, 2))     # [n, H, dh]
        flat = ad.reshape(mixed, (n, self.h))
        return ad.add(ad.matmul(flat, self.wo), self.bo)


class GPSLayer:
    """X' = MLP(MPNN(X, E) + GlobalATTn(X)); MPNN is the direction-wrapped
    GIN (edge variant when edge features are in play)."""

    def __init__(self, store, prefix, h, mode, heads=4, edge_dim=0):
        self.mpnn = GINLayer(store, f"{prefix}.mpnn", h, mode, edge_dim=edge_dim)
        self.attn = AttentionLayer(store, f"{prefix}.attn", h, heads=heads)
        self.fuse = ad.MLP(store, f"{prefix}.fuse", (h, 2 * h, h))

    def forward(self, x, branches, edge_feats=None, bias=None,
                node_cap=GPS_NODE_CAP, drop=None):
        local = self.mpnn.forward(x, branches, edge_feats, drop=drop)
        wide = self.attn.forward(x, bias=bias, node_cap=node_cap)
        return self.fuse(ad.add(local, wide), drop=drop)
