"""Magnetic Laplacian and the two positional-encoding pathways.

NPE concatenates raw eigenvector parts to node features and is
deliberately unstable under eigenbasis ambiguity.  EPE builds matrix
functions B_l = V diag(kappa_l(lambda)) V^dagger, so phase and basis
choices cancel; kappa runs elementwise over eigenvalues and rho
elementwise over node pairs, which gives permutation equivariance by
construction.  Gradients flow into kappa/rho parameters only; the
spectral basis is a constant of the tape.
"""

import hashlib
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import (InvalidPotential, InvalidSpec, NodeCapExceeded,
                     ParseError, ShapeMismatch)
from .graphs import degree_total
from .linalg import ComplexDense, eig_hermitian, smallest_d

PE_NODE_CAP = 2000

_CACHE_MAGIC = b"DGPE"
_CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sIqqqd")


@dataclass(frozen=True)
class PEConfig:
    mode: str = "none"         # none | npe | epe
    q: float = 0.0
    d: int = 8                 # eigenpair count
    m: int = 4                 # EPE spectral channels
    c: int = 8                 # EPE output channels

    def __post_init__(self):
        if self.mode not in ("none", "npe", "epe"):
            raise InvalidSpec(f"unknown pe mode {self.mode!r}")
        if not 0.0 <= self.q < 1.0:
            raise InvalidPotential(f"potential q={self.q} outside [0, 1)")
        for name in ("d", "m", "c"):
            if getattr(self, name) < 1:
                raise InvalidSpec(f"pe.{name} must be >= 1")


@dataclass(frozen=True)
class SpectralDecomposition:
    q: float
    eigenvalues: np.ndarray     # ascending, float64 [d]
    eigenvectors: ComplexDense  # [n x d]
    pad_count: int = 0


def magnetic_adjacency(g, q):
    """A_q: e^{i2pi q} for one-way edges, 1 for reciprocal pairs, Hermitian."""
    if not 0.0 <= q < 1.0:
        raise InvalidPotential(f"potential q={q} outside [0, 1)")
    n = g.num_nodes
    present = np.zeros((n, n), dtype=bool)
    if g.num_edges:
        present[g.edges[:, 0], g.edges[:, 1]] = True
    recip = present & present.T
    fwd = present & ~present.T
    re = np.zeros((n, n))
    im = np.zeros((n, n))
    angle = 2.0 * np.pi * q
    re[fwd] = np.cos(angle)
    im[fwd] = np.sin(angle)
    re[fwd.T] = np.cos(angle)
    im[fwd.T] = -np.sin(angle)
    re[recip] = 1.0
    im[recip] = 0.0
    return ComplexDense(re, im)


def magnetic_laplacian(g, q):
    """L_q = I - D^{-1/2} A_q D^{-1/2} with total (in+out) degrees.

    Isolated nodes take the convention D^{-1/2} = 0, which leaves an
    identity row.
    """
    a = magnetic_adjacency(g, q)
    deg = degree_total(g).astype(np.float64)
    dinv = np.zeros_like(deg)
    np.divide(1.0, np.sqrt(deg), out=dinv, where=deg > 0)
    scale = np.outer(dinv, dinv)
    return ComplexDense(np.eye(g.num_nodes) - scale * a.re, -scale * a.im)


def compute_pe_basis(g, q, d, node_cap=PE_NODE_CAP):
    """Smallest-d eigenpairs of L_q; refuses graphs above the node cap
    (dense O(n^3) solve and O(n^2) PE tensors)."""
    if g.num_nodes > node_cap:
        raise NodeCapExceeded(
            f"graph has {g.num_nodes} nodes, PE cap is {node_cap}")
    dec = smallest_d(eig_hermitian(magnetic_laplacian(g, q)), d)
    return SpectralDecomposition(q, dec.eigenvalues, dec.eigenvectors,
                                 dec.pad_count)


def npe(dec):
    """[Re V | Im V] as extra node features, [n x 2d]."""
    return np.hstack([dec.eigenvectors.re, dec.eigenvectors.im])


class EPENetworks:
    """kappa: shared MLP eigenvalue -> m channels; rho: per-pair MLP 2m -> c."""

    def __init__(self, store, m=4, c=8, prefix="epe"):
        self.m = m
        self.c = c
        self.kappa = ad.MLP(store, prefix + ".kappa", (1, 16, 16, m))
        self.rho = ad.MLP(store, prefix + ".rho", (2 * m, 16, c))


def epe(dec, nets):
    """Stable pairwise encoding [n x n x c], differentiable in nets only."""
    n = dec.eigenvectors.rows
    vr = ad.Tensor(dec.eigenvectors.re)
    vi = ad.Tensor(dec.eigenvectors.im)
    vrt = ad.Tensor(dec.eigenvectors.re.T.copy())
    vit = ad.Tensor(dec.eigenvectors.im.T.copy())
    k = nets.kappa(ad.Tensor(dec.eigenvalues.reshape(-1, 1)))  # [d, m]
    kt = ad.transpose(k, (1, 0))
    slabs = []
    for part in ("re", "im"):
        for l in range(nets.m):
            kl = ad.gather(kt, np.array([l]))        # [1, d], broadcasts over rows
            vr_k = ad.mul(vr, kl)
            vi_k = ad.mul(vi, kl)
            if part == "re":
                slab = ad.add(ad.matmul(vr_k, vrt), ad.matmul(vi_k, vit))
            else:
                slab = ad.sub(ad.matmul(vi_k, vrt), ad.matmul(vr_k, vit))
            slabs.append(ad.reshape(slab, (n, n, 1)))
    stacked = ad.concat(slabs, axis=2)               # [n, n, 2m]
    flat = ad.reshape(stacked, (n * n, 2 * nets.m))
    out = nets.rho(flat)
    return ad.reshape(out, (n, n, nets.c))


def epe_slice_at(epe_tensor, edges, num_nodes):
    """Rows epe[src, dst, :] for an explicit [m x 2] edge array."""
    n, n2, c = epe_tensor.shape
    if n != n2 or n != num_nodes:
        raise ShapeMismatch(
            f"epe tensor {epe_tensor.shape} does not match graph of {num_nodes} nodes")
    flat = ad.reshape(epe_tensor, (n * n, c))
    idx = edges[:, 0] * n + edges[:, 1]
    return ad.gather(flat, idx)


def epe_edge_slice(epe_tensor, g):
    """Rows epe[src, dst, :] per edge, in edge order."""
    return epe_slice_at(epe_tensor, g.edges, g.num_nodes)


def epe_attn_bias(epe_tensor, projection):
    """Per-head additive attention bias [H x n x n] from a c -> H projection."""
    n, n2, c = epe_tensor.shape
    if projection.shape[0] != c:
        raise ShapeMismatch(
            f"projection maps {projection.shape[0]} channels, epe has {c}")
    flat = ad.reshape(epe_tensor, (n * n, c))
    heads = ad.matmul(flat, projection)              # [n*n, H]
    cube = ad.reshape(heads, (n, n, projection.shape[1]))
    return ad.transpose(cube, (2, 0, 1))


class PECache:
    """Binary eigenpair cache keyed by (edge-set hash, q, d)."""

    def __init__(self, directory):
        self.directory = directory
        os.makedirs(directory, exist_ok=True)

    @staticmethod
    def _key(g, q, d):
        h = hashlib.sha256()
        h.update(struct.pack("<q", g.num_nodes))
        order = np.lexsort((g.edges[:, 1], g.edges[:, 0])) if g.num_edges else []
        h.update(np.ascontiguousarray(g.edges[order], dtype="<i8").tobytes())
        return f"{h.hexdigest()}.q{q:.12g}.d{d}.pe"

    def _path(self, g, q, d):
        return os.path.join(self.directory, self._key(g, q, d))

    def store(self, g, q, d, dec):
        n = dec.eigenvectors.rows
        header = _CACHE_HEADER.pack(_CACHE_MAGIC, _CACHE_VERSION, n, d,
                                    dec.pad_count, q)
        with open(self._path(g, q, d), "wb") as fh:
            fh.write(header)
            fh.write(dec.eigenvalues.astype("<f8").tobytes())
            fh.write(np.ascontiguousarray(dec.eigenvectors.re, "<f8").tobytes())
            fh.write(np.ascontiguousarray(dec.eigenvectors.im, "<f8").tobytes())

    def load(self, g, q, d):
        path = self._path(g, q, d)
        if not os.path.exists(path):
            return None
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) < _CACHE_HEADER.size:
            raise ParseError(f"truncated pe cache record {path}")
        magic, version, n, dd, pad, qq = _CACHE_HEADER.unpack_from(blob)
        if magic != _CACHE_MAGIC or version != _CACHE_VERSION:
            raise ParseError(f"unrecognized pe cache record {path}")
        body = np.frombuffer(blob, dtype="<f8", offset=_CACHE_HEADER.size)
        if body.size != dd + 2 * n * dd:
            raise ParseError(f"pe cache record {path} has wrong payload size")
        vals = body[:dd].copy()
        re = body[dd:dd + n * dd].reshape(n, dd).copy()
        im = body[dd + n * dd:].reshape(n, dd).copy()
        return SpectralDecomposition(qq, vals, ComplexDense(re, im), int(pad))

    def get_or_compute(self, g, q, d, node_cap=PE_NODE_CAP):
        dec = self.load(g, q, d)
        if dec is None:
            dec = compute_pe_basis(g, q, d, node_cap=node_cap)
            self.store(g, q, d, dec)
        return dec
