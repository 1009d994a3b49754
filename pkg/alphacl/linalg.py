"""Small dense linear algebra: a cyclic Jacobi eigensolver used as a verification oracle."""

from __future__ import annotations

import numpy as np

from alphacl.utils import ConvergenceError, ShapeError, as_float_array


def jacobi_eigh(
    A: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100
) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Kept free of LAPACK so that it can independently check the flows built on numpy.

    Args:
        A (np.ndarray): symmetric n x n matrix
        tol (float): stop once the off-diagonal Frobenius norm is below tol * ||A||_F
        max_sweeps (int): cap on full sweeps

    Returns:
        tuple[np.ndarray, np.ndarray]: eigenvalues sorted descending, and the matching
            unit eigenvectors as columns

    """
    A = np.array(as_float_array(A, "A", ndim=2))
    n = A.shape[0]
    if A.shape != (n, n):
        raise ShapeError(f"jacobi_eigh needs a square matrix, got {A.shape}.")
    A = 0.5 * (A + A.T)
    V = np.eye(n)

    scale = max(np.linalg.norm(A), np.finfo(np.float64).tiny)
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(A**2) - np.sum(np.diag(A) ** 2), 0.0))
        if off <= tol * scale:
            break

        for p in range(n - 1):
            for q in range(p + 1, n):
                if A[p, q] == 0.0:
                    continue
                # rotation angle zeroing A[p, q], small-angle branch for stability
                theta = (A[q, q] - A[p, p]) / (2.0 * A[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta**2 + 1.0)) if theta else 1.0
                c = 1.0 / np.sqrt(t**2 + 1.0)
                s = t * c

                rot_p = c * A[:, p] - s * A[:, q]
                rot_q = s * A[:, p] + c * A[:, q]
                A[:, p], A[:, q] = rot_p, rot_q
                rot_p = c * A[p, :] - s * A[q, :]
                rot_q = s * A[p, :] + c * A[q, :]
                A[p, :], A[q, :] = rot_p, rot_q

                rot_p = c * V[:, p] - s * V[:, q]
                rot_q = s * V[:, p] + c * V[:, q]
                V[:, p], V[:, q] = rot_p, rot_q
    else:
        off = np.sqrt(max(np.sum(A**2) - np.sum(np.diag(A) ** 2), 0.0))
        if off > tol * scale * 1e3:
            raise ConvergenceError(
                "Jacobi sweeps did not diagonalize the matrix.",
                diagnostics={"off_norm": off, "max_sweeps": max_sweeps},
            )

    eigenvalues = np.diag(A).copy()
    order = np.argsort(-eigenvalues, kind="stable")
    return eigenvalues[order], V[:, order]


def top_eigenpair(A: np.ndarray) -> tuple[float, np.ndarray]:
    """The largest eigenvalue and its unit eigenvector.

    Args:
        A (np.ndarray): symmetric matrix

    Returns:
        tuple[float, np.ndarray]:

    """
    eigenvalues, vectors = jacobi_eigh(A)
    return float(eigenvalues[0]), vectors[:, 0]


def top_singular_values(W: np.ndarray, count: int = 2) -> np.ndarray:
    """The `count` largest singular values, zero-padded when W has fewer.

    Args:
        W (np.ndarray): matrix
        count (int): how many

    Returns:
        np.ndarray:

    """
    sigma = np.linalg.svd(W, compute_uv=False)
    padded = np.zeros(count)
    padded[: min(count, sigma.shape[0])] = sigma[:count]
    return padded


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """A Haar-distributed orthogonal matrix from the QR of a Gaussian matrix.

    Args:
        n (int): size
        rng (np.random.Generator): generator

    Returns:
        np.ndarray:

    """
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))
