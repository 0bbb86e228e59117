"""Factor eigenbases and the two-dimensional graph Fourier transform.

Signals live on the Cartesian product of a temporal and a spatial graph.
Because the product Laplacian is the Kronecker sum of the factor
Laplacians, its eigenbasis is the Kronecker product of the factor bases,
so the transform is computed factor-wise: F_hat = U1^T F U2. The factor
Laplacians are real symmetric, hence the bases are real and orthonormal
and no conjugation is needed anywhere.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .graph import Laplacian

JACOBI_TOL = 1e-12
JACOBI_SWEEP_LIMIT = 100
# Eigenvalues closer than this are treated as one degenerate group when
# fixing the basis orientation.
DEGENERACY_TOL = 1e-8


def _rotate(a, v, p, q, c, s):
    # A <- J^T A J and V <- V J with J the rotation in the (p, q) plane,
    # J[p,p] = J[q,q] = c, J[p,q] = s, J[q,p] = -s.
    col_p = a[:, p].copy()
    col_q = a[:, q].copy()
    a[:, p] = c * col_p - s * col_q
    a[:, q] = s * col_p + c * col_q
    row_p = a[p, :].copy()
    row_q = a[q, :].copy()
    a[p, :] = c * row_p - s * row_q
    a[q, :] = s * row_p + c * row_q
    a[p, q] = 0.0
    a[q, p] = 0.0
    col_p = v[:, p].copy()
    col_q = v[:, q].copy()
    v[:, p] = c * col_p - s * col_q
    v[:, q] = s * col_p + c * col_q


def symmetric_eigh(matrix, tol=JACOBI_TOL, max_sweeps=JACOBI_SWEEP_LIMIT):
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi sweeps.

    Returns (eigenvalues, eigenvectors) with eigenvalues ascending and
    eigenvectors as columns. The result is made reproducible across
    platforms: every eigenvector is flipped so its largest-magnitude entry
    is positive (ties broken by lowest index), and columns inside a
    degenerate eigenvalue group are ordered lexicographically. Convergence
    is declared once every off-diagonal entry falls below tol relative to
    the Frobenius norm of the input.
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n == 1:
        return a[0].copy(), np.ones((1, 1))
    if np.max(np.abs(a - a.T)) > 1e-9:
        raise ValueError("matrix is not symmetric")
    a = (a + a.T) / 2.0
    v = np.eye(n)
    thresh = tol * max(1.0, float(np.linalg.norm(a)))
    skip = 0.1 * thresh
    for _ in range(max_sweeps):
        upper = np.triu(a, k=1)
        if np.max(np.abs(upper)) <= thresh:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= skip:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                _rotate(a, v, p, q, c, t * c)
    else:
        raise RuntimeError(
            f"jacobi rotations did not converge within {max_sweeps} sweeps"
        )
    w = np.diagonal(a).copy()
    order = np.argsort(w, kind="stable")
    w = w[order]
    v = v[:, order]
    for j in range(n):
        k = int(np.argmax(np.abs(v[:, j])))
        if v[k, j] < 0.0:
            v[:, j] = -v[:, j]
    # Lexicographic order inside degenerate groups. Eigenvalues travel with
    # their columns so eigenpairs stay intact.
    start = 0
    for stop in range(1, n + 1):
        if stop == n or w[stop] - w[stop - 1] > DEGENERACY_TOL:
            if stop - start > 1:
                cols = sorted(range(start, stop), key=lambda i: tuple(v[:, i]))
                v[:, start:stop] = v[:, cols]
                w[start:stop] = w[cols]
            start = stop
    return w, v


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues (ascending) and orthonormal eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    source_graph_id: str = ""

    def __post_init__(self):
        w = np.asarray(self.eigenvalues, dtype=np.float64)
        v = np.asarray(self.eigenvectors, dtype=np.float64)
        if w.ndim != 1 or v.ndim != 2 or v.shape != (w.size, w.size):
            raise ValueError(
                f"inconsistent spectrum shapes: {w.shape} values, {v.shape} vectors"
            )
        for arr, name in ((w, "eigenvalues"), (v, "eigenvectors")):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
        w = np.ascontiguousarray(w)
        v = np.ascontiguousarray(v)
        w.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "eigenvalues", w)
        object.__setattr__(self, "eigenvectors", v)

    @property
    def n_nodes(self) -> int:
        return self.eigenvalues.size


def eigendecompose(lap: Laplacian) -> Spectrum:
    w, v = symmetric_eigh(lap.matrix)
    return Spectrum(w, v, lap.source_graph_id)


@dataclass(frozen=True)
class ProductBasis:
    """Factor spectra of a temporal-by-spatial product graph."""

    temporal: Spectrum
    spatial: Spectrum

    @property
    def shape(self):
        return self.temporal.n_nodes, self.spatial.n_nodes


def _check_grid(shape, basis: ProductBasis):
    if shape != basis.shape:
        raise ValueError(
            f"signal shape {shape} does not match basis grid {basis.shape}"
        )


def gft_2d(signal, basis: ProductBasis) -> np.ndarray:
    """Transform one (time, vehicle) signal into the product eigenbasis.

    Entry (l1, l2) of the result is the projection onto the Kronecker
    product of temporal eigenvector l1 and spatial eigenvector l2.
    """
    f = np.asarray(signal, dtype=np.float64)
    if f.ndim != 2:
        raise ValueError(f"expected a 2-d signal, got shape {f.shape}")
    _check_grid(f.shape, basis)
    return basis.temporal.eigenvectors.T @ f @ basis.spatial.eigenvectors


def gft_extended(features, basis: ProductBasis) -> np.ndarray:
    """Channel-wise transform of a (channels, time, vehicle) tensor."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 3:
        raise ValueError(f"expected a 3-d feature tensor, got shape {f.shape}")
    _check_grid(f.shape[1:], basis)
    return basis.temporal.eigenvectors.T @ f @ basis.spatial.eigenvectors


def inverse_gft(coefficients, basis: ProductBasis, p: int | None = None) -> np.ndarray:
    """Back-transform, optionally keeping only the p lowest temporal modes.

    Truncation acts on the temporal axis only (a low-pass in graph
    frequency); the spatial axis is always fully resolved.
    """
    fhat = np.asarray(coefficients, dtype=np.float64)
    if fhat.ndim not in (2, 3):
        raise ValueError(f"expected 2-d or 3-d coefficients, got shape {fhat.shape}")
    _check_grid(fhat.shape[-2:], basis)
    n1 = basis.temporal.n_nodes
    if p is None:
        p = n1
    if not 1 <= p <= n1:
        raise ValueError(f"p must be in [1, {n1}], got {p}")
    u1 = basis.temporal.eigenvectors[:, :p]
    return u1 @ fhat[..., :p, :] @ basis.spatial.eigenvectors.T


def truncate_spectrum(coefficients, p: int) -> np.ndarray:
    """Keep the p lowest temporal modes and flatten (k, l1, l2) row-major."""
    fhat = np.asarray(coefficients, dtype=np.float64)
    if fhat.ndim != 3:
        raise ValueError(f"expected a 3-d coefficient tensor, got shape {fhat.shape}")
    if not 1 <= p <= fhat.shape[1]:
        raise ValueError(f"p must be in [1, {fhat.shape[1]}], got {p}")
    return fhat[:, :p, :].reshape(-1).copy()


def write_spectrum_csv(basis: ProductBasis, path):
    """Factor eigenvalues, one row per (axis, index)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["axis", "index", "eigenvalue"])
        for name, spec in (("temporal", basis.temporal), ("spatial", basis.spatial)):
            for i, lam in enumerate(spec.eigenvalues):
                writer.writerow([name, i, repr(float(lam))])


def write_tensor_csv(tensor, path, header=("k", "l1", "l2", "value")):
    """Flat dump of a (channels, time, vehicle) tensor with index columns."""
    arr = np.asarray(tensor, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"expected a 3-d tensor, got shape {arr.shape}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(header))
        for k in range(arr.shape[0]):
            for i in range(arr.shape[1]):
                for j in range(arr.shape[2]):
                    writer.writerow([k, i, j, repr(float(arr[k, i, j]))])
