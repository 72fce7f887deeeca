"""Dense complex matrices and a Hermitian eigensolver.

The solver embeds an n-by-n Hermitian matrix into the real symmetric
2n-by-2n block form [[Re, -Im], [Im, Re]] and diagonalizes that with
cyclic Jacobi rotations.  Every eigenvalue of the complex matrix shows
up twice in the embedding; complex eigenvectors are rebuilt from the
block halves, deduplicated with a Gram-Schmidt residual test.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceFailure, NotHermitian, NotSquare, ShapeMismatch

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
HERMITIAN_TOL = 1e-8
# a duplicate eigenvector (the i-rotated copy of one already accepted)
# leaves a Gram-Schmidt residual near 0; a genuinely new direction in a
# degenerate cluster keeps most of its unit mass
DEDUP_RESIDUAL = 0.25


class ComplexDense:
    """Dense complex matrix held as paired float64 real/imag arrays."""

    __slots__ = ("re", "im")

    def __init__(self, re, im=None):
        re = np.asarray(re, dtype=np.float64)
        if im is None:
            im = np.zeros_like(re)
        else:
            im = np.asarray(im, dtype=np.float64)
        if re.ndim != 2:
            raise ShapeMismatch(f"ComplexDense expects a 2-d array, got ndim={re.ndim}")
        if im.shape != re.shape:
            raise ShapeMismatch(
                f"real part {re.shape} and imaginary part {im.shape} disagree")
        self.re = re
        self.im = im

    @property
    def rows(self):
        return self.re.shape[0]

    @property
    def cols(self):
        return self.re.shape[1]

    @property
    def shape(self):
        return self.re.shape

    @classmethod
    def from_complex(cls, z):
        z = np.asarray(z, dtype=np.complex128)
        return cls(z.real.copy(), z.imag.copy())

    def to_complex(self):
        return self.re + 1j * self.im

    def conj_transpose(self):
        return ComplexDense(self.re.T.copy(), -self.im.T.copy())


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues ascending; eigenvector column j pairs with eigenvalue j."""

    eigenvalues: np.ndarray
    eigenvectors: ComplexDense
    pad_count: int = 0


def hermitian_residual(m):
    """Max-modulus entry of M - M^dagger; zero exactly when Hermitian."""
    if m.rows != m.cols:
        raise NotSquare(f"matrix is {m.rows}x{m.cols}")
    d_re = m.re - m.re.T
    d_im = m.im + m.im.T
    return float(np.sqrt(d_re * d_re + d_im * d_im).max(initial=0.0))


def _round_robin(n):
    """Tournament schedule: n-1 rounds of n/2 disjoint index pairs (n even)."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        pairs = []
        for i in range(n // 2):
            a, b = players[i], players[n - 1 - i]
            pairs.append((a, b) if a < b else (b, a))
        rounds.append((np.array([p for p, _ in pairs]),
                       np.array([q for _, q in pairs])))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _jacobi_symmetric(s, thresh):
    """Cyclic Jacobi on a real symmetric matrix; returns (diag, V) unsorted.

    Each round-robin round holds disjoint pairs, so all of its rotations
    commute and apply as a single orthogonal factor G via two matmuls.
    Rotation angles follow the classical small-angle convention
    (|theta| <= pi/4), which keeps the sweep count low.
    """
    n = s.shape[0]
    a = s.copy()
    v = np.eye(n)
    if n == 1:
        return np.diag(a).copy(), v
    rounds = _round_robin(n)
    skip = thresh / (4.0 * n)
    g = np.eye(n)
    for sweep in range(JACOBI_MAX_SWEEPS + 1):
        off = a.copy()
        np.fill_diagonal(off, 0.0)
        if np.linalg.norm(off) < thresh:
            break
        if sweep == JACOBI_MAX_SWEEPS:
            raise ConvergenceFailure(
                f"Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps "
                f"(off-diagonal {np.linalg.norm(off):.3e}, threshold {thresh:.3e})")
        for p_idx, q_idx in rounds:
            apq = a[p_idx, q_idx]
            active = np.abs(apq) > skip
            if not active.any():
                continue
            if active.all():
                p, q = p_idx, q_idx
            else:
                p, q, apq = p_idx[active], q_idx[active], apq[active]
            tau = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.where(tau >= 0.0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            sn = t * c
            g[p, p] = c
            g[q, q] = c
            g[p, q] = sn
            g[q, p] = -sn
            a = g.T @ a @ g
            v = v @ g
            g[p, p] = 1.0
            g[q, q] = 1.0
            g[p, q] = 0.0
            g[q, p] = 0.0
        a = 0.5 * (a + a.T)
    return np.diag(a).copy(), v


def eig_hermitian(m):
    """Full eigendecomposition of a Hermitian ComplexDense matrix.

    Deterministic phase convention: each column is rotated so that its
    largest-modulus entry is real and positive; among equal moduli the
    lowest index wins.
    """
    res = hermitian_residual(m)
    if res >= HERMITIAN_TOL:
        raise NotHermitian(f"hermitian residual {res:.3e} >= {HERMITIAN_TOL:.0e}")
    n = m.rows
    fro = float(np.sqrt(np.sum(m.re * m.re) + np.sum(m.im * m.im)))
    if fro == 0.0:
        return EigenDecomposition(np.zeros(n),
                                  ComplexDense(np.eye(n), np.zeros((n, n))))
    embed = np.block([[m.re, -m.im], [m.im, m.re]])
    embed = 0.5 * (embed + embed.T)
    vals, vecs = _jacobi_symmetric(embed, JACOBI_TOL * fro)
    order = np.argsort(vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]

    basis = np.zeros((n, n), dtype=np.complex128)  # accepted vectors as rows
    eigvals = np.zeros(n)
    count = 0
    for j in range(2 * n):
        z = vecs[:n, j] + 1j * vecs[n:, j]
        if count:
            z = z - basis[:count].T @ (basis[:count].conj() @ z)
        r = np.linalg.norm(z)
        if r <= DEDUP_RESIDUAL:
            continue
        if count == n:
            raise ConvergenceFailure(
                "eigenvector dedup accepted more than n directions")
        basis[count] = z / r
        eigvals[count] = vals[j]
        count += 1
    if count != n:
        raise ConvergenceFailure(
            f"eigenvector dedup recovered {count} of {n} directions")

    cols = basis.T.copy()
    for j in range(n):
        k = int(np.argmax(np.abs(cols[:, j])))
        pivot = cols[k, j]
        cols[:, j] *= np.conj(pivot) / abs(pivot)
        cols[:, j] /= np.linalg.norm(cols[:, j])
    return EigenDecomposition(eigvals, ComplexDense(cols.real.copy(), cols.imag.copy()))


def smallest_d(dec, d):
    """Keep the d smallest eigenpairs, zero-padding columns when n < d."""
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    n = dec.eigenvalues.shape[0]
    rows = dec.eigenvectors.rows
    k = min(d, n)
    vals = dec.eigenvalues[:k].copy()
    re = dec.eigenvectors.re[:, :k].copy()
    im = dec.eigenvectors.im[:, :k].copy()
    pad = d - k
    if pad > 0:
        vals = np.concatenate([vals, np.zeros(pad)])
        re = np.hstack([re, np.zeros((rows, pad))])
        im = np.hstack([im, np.zeros((rows, pad))])
    return EigenDecomposition(vals, ComplexDense(re, im), pad_count=pad)
