"""
Dirichlet problems for div(c grad q) and the Helmholtz projection.

The stiffness matrix K = sum_ab D_a^T diag(w kappa c g^ab) D_b is the
summation-by-parts form of -div(c grad .), so on fields vanishing on the
boundary ring it is symmetric positive definite and

    laplace_c(c, q)_I = -(K q)_I / (w kappa)_I

holds exactly on interior nodes.
"""

import hashlib
import logging
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg, eigsh, splu
from scipy.special import jn_zeros

from disk_grid import divergence, gradient, h_norm
from exceptions import DomainError, SolverError

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10
CG_RTOL = 1e-12


class SparseFactor:
    """
    SuperLU factorization of a symmetric positive definite matrix.

    solve() applies one step of iterative refinement and falls back to
    conjugate gradients when the refined residual is still too large.
    """

    def __init__(self, matrix):
        self.matrix = sp.csc_matrix(matrix)
        self.lu = splu(self.matrix, permc_spec='MMD_AT_PLUS_A')

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        scale = np.linalg.norm(rhs)
        if scale == 0.0:
            return np.zeros_like(rhs)

        x = self.lu.solve(rhs)
        x += self.lu.solve(rhs - self.matrix @ x)
        residual = np.linalg.norm(rhs - self.matrix @ x) / scale
        if residual <= RESIDUAL_TOL:
            return x

        logger.warning("Direct solve residual %.3g above %.1g; falling back to CG", residual, RESIDUAL_TOL)
        x, info = cg(self.matrix, rhs, x0=x, rtol=CG_RTOL, maxiter=10 * self.matrix.shape[0])
        residual = np.linalg.norm(rhs - self.matrix @ x) / scale
        if info != 0 or residual > RESIDUAL_TOL:
            raise SolverError(
                f"Dirichlet solve did not converge (relative residual {residual:.3g})",
                residual=residual, iterations=info,
            )
        return x


class FactorizationCache:
    """Thread-safe LRU cache of SparseFactor objects keyed by (frame, coefficient)."""

    def __init__(self, max_entries=32):
        self.max_entries = max_entries
        self._entries = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, key, build):
        """
        Return the cached factor for key, building it with build() on a miss.

        Args:
            key: Hashable cache key
            build: Zero-argument callable returning a sparse matrix
        """
        with self._lock:
            if key in self._entries:
                self._entries.move_to_end(key)
                self.hits += 1
                return self._entries[key]
            self.misses += 1

        factor = SparseFactor(build())
        with self._lock:
            self._entries[key] = factor
            while len(self._entries) > self.max_entries:
                self._entries.popitem(last=False)
        return factor

    def clear(self):
        with self._lock:
            self._entries.clear()
            self.hits = 0
            self.misses = 0

    def __len__(self):
        return len(self._entries)


_CACHE = FactorizationCache()


def factorization_cache():
    return _CACHE


def clear_cache():
    _CACHE.clear()


def coefficient_key(c):
    """Hashable fingerprint of a scalar or field coefficient."""
    arr = np.asarray(c, dtype=float)
    if arr.ndim == 0:
        return ('const', float(arr))
    return ('field', hashlib.sha1(np.ascontiguousarray(arr).tobytes()).hexdigest())


def _coefficient_field(grid, c):
    c = np.broadcast_to(np.asarray(c, dtype=float), grid.shape)
    if np.min(c[:-1]) <= 0.0:
        raise DomainError(f"elliptic coefficient must be positive, min is {np.min(c[:-1]):.3g}")
    return c


def stiffness_matrix(grid, frame, c=1.0):
    """
    Assemble K = sum_ab D_a^T diag(w kappa c g^ab) D_b over all nodes.

    Returns:
        scipy.sparse.csr_matrix of size grid.size
    """
    wkc = (grid.weights * np.real(frame.kappa) * np.broadcast_to(c, grid.shape)).ravel()
    g_inv = np.real(frame.g_inv)
    K = None
    for a in range(2):
        for b in range(2):
            term = grid.partial_t[a] @ sp.diags(wkc * g_inv[a, b].ravel()) @ grid.partial[b]
            K = term if K is None else K + term
    return K.tocsr()


def interior_block(grid, matrix):
    """Rows and columns of the interior (non-boundary) nodes."""
    n = grid.n_interior
    return matrix[:n, :n]


def _interior_factor(grid, frame, c):
    key = ('stiffness', frame.key, coefficient_key(c), grid.key)
    return _CACHE.get(key, lambda: interior_block(grid, stiffness_matrix(grid, frame, c)))


def dirichlet_solve(grid, frame, c, f, boundary=None):
    """
    Solve div(c grad q) = f on interior nodes with q given on the boundary ring.

    Args:
        grid: DiskGrid
        frame: Frame supplying kappa and g_inv
        c: Positive coefficient (scalar or field)
        f: Right-hand side (scalar field; boundary-ring values ignored)
        boundary: Dirichlet data on the boundary ring (default zero)

    Returns:
        Scalar field q

    Raises:
        DomainError: c not positive on the interior
        SolverError: the linear solve failed
    """
    c_field = _coefficient_field(grid, c)
    f = np.asarray(f, dtype=float)
    n = grid.n_interior
    q = np.zeros(grid.size)
    rhs = -(grid.weights * np.real(frame.kappa) * f).ravel()[:n]
    if boundary is not None and np.any(boundary):
        q[n:] = boundary
        K = stiffness_matrix(grid, frame, c_field)
        rhs = rhs - K[:n, n:] @ q[n:]
    if not np.any(rhs):
        return q.reshape(grid.shape)

    q[:n] = _interior_factor(grid, frame, c).solve(rhs)
    return q.reshape(grid.shape)


def dirichlet_eigenvalues(grid, frame, c=1.0, k=1):
    """
    Smallest k eigenvalues of -div(c grad .) with Dirichlet conditions.

    Generalized symmetric problem K_II v = lambda diag(w kappa)_I v,
    shift-invert at zero.
    """
    c = _coefficient_field(grid, c)
    K = interior_block(grid, stiffness_matrix(grid, frame, c)).tocsc()
    M = sp.diags((grid.weights * np.real(frame.kappa)).ravel()[:grid.n_interior]).tocsc()
    values = eigsh(K, k=k, M=M, sigma=0.0, which='LM', return_eigenvectors=False)
    return np.sort(values)


def bessel_zero():
    """First positive zero j_{0,1} of the Bessel function J_0, taken from scipy.special.jn_zeros."""
    return float(jn_zeros(0, 1)[0])


@dataclass(frozen=True)
class Projection:
    W0: np.ndarray
    W1: np.ndarray
    q: np.ndarray


def project(grid, frame, U):
    """
    Helmholtz split U = W0 + grad q with laplace(q) = div U, q = 0 on the boundary.

    Args:
        grid: DiskGrid
        frame: Frame
        U: Vector field

    Returns:
        Projection(W0, W1, q); W0 is divergence free on interior nodes
    """
    q = dirichlet_solve(grid, frame, 1.0, divergence(grid, frame, U))
    W1 = gradient(grid, frame, q)
    return Projection(W0=U - W1, W1=W1, q=q)


def apply_P(grid, frame, U):
    return project(grid, frame, U).W0


def projection_defect(grid, frame, W):
    """||(I - P) W|| / ||W|| (zero for the zero field)."""
    scale = h_norm(grid, frame, W, 0)
    if scale == 0.0:
        return 0.0
    return h_norm(grid, frame, project(grid, frame, W).W1, 0) / scale


def continuity_constants(grid, frame, U, r=1):
    """
    Measured ratios ||PU||_r / ||U||_r and ||(I-P)U||_r / ||div U||_(r-1).

    r must be 1 or 2 so that div U is measured in a nonnegative order.
    """
    split = project(grid, frame, U)
    u_norm = h_norm(grid, frame, U, r)
    div_norm = h_norm(grid, frame, _interior_only(divergence(grid, frame, U)), r - 1)
    return {
        'P': h_norm(grid, frame, split.W0, r) / u_norm if u_norm else 0.0,
        'I-P': h_norm(grid, frame, split.W1, r) / div_norm if div_norm else 0.0,
    }


def _interior_only(q):
    out = np.array(q, copy=True)
    out[-1] = 0.0
    return out


def poisson_error(grid, frame):
    """Max interior error of the solve of laplace q = 1 against (r^2 - 1)/4."""
    q = dirichlet_solve(grid, frame, 1.0, np.ones(grid.shape))
    exact = 0.25 * (grid.radius**2 - 1.0)
    return float(np.max(np.abs(q - exact)))


def bessel_eigenvalue_error(grid, frame):
    """Relative error of the lowest Dirichlet eigenvalue against j_{0,1}^2."""
    exact = bessel_zero() ** 2
    return abs(float(dirichlet_eigenvalues(grid, frame)[0]) - exact) / exact


def observed_order(errors, spacings):
    """Pairwise observed orders log(e_i / e_i+1) / log(h_i / h_i+1)."""
    return [
        math.log(errors[i] / errors[i + 1]) / math.log(spacings[i] / spacings[i + 1])
        if errors[i + 1] > 0 and errors[i] > 0 else float('nan')
        for i in range(len(errors) - 1)
    ]
