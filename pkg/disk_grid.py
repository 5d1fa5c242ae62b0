"""
Staggered polar grid on the unit disk and its summation-by-parts calculus.

Scalar fields are arrays of shape (n_r, n_theta); vector fields are arrays of
shape (2, n_r, n_theta) holding Cartesian y-components W^a. Flat node index
k = i * n_theta + j, so the boundary ring occupies the last n_theta entries.

The divergence is the exact negative adjoint of the gradient in the
kappa-weighted quadrature inner product, so

    <grad q, W> + <q, div W> = boundary sum of q W_N dS

holds to rounding for every pair of grid fields.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from exceptions import DomainError, UnsupportedOrderError

logger = logging.getLogger(__name__)

MAX_NORM_ORDER = 2


class DiskGrid:
    """Staggered polar grid: r_i = (i + 1/2) dr with the last ring at r = 1."""

    def __init__(self, n_r=64, n_theta=128):
        """
        Build the grid and its derivative matrices.

        Args:
            n_r: Number of radial rings (boundary ring included)
            n_theta: Number of angular nodes per ring (even)
        """
        if n_r < 4:
            raise DomainError(f"n_r must be at least 4, got {n_r}")
        if n_theta < 8 or n_theta % 2:
            raise DomainError(f"n_theta must be even and at least 8, got {n_theta}")

        self.n_r = int(n_r)
        self.n_theta = int(n_theta)
        self.shape = (self.n_r, self.n_theta)
        self.size = self.n_r * self.n_theta
        self.n_interior = (self.n_r - 1) * self.n_theta

        self.dr = 1.0 / (self.n_r - 0.5)
        self.dtheta = 2.0 * np.pi / self.n_theta
        self.r = (np.arange(self.n_r) + 0.5) * self.dr
        self.r[-1] = 1.0
        self.theta = np.arange(self.n_theta) * self.dtheta

        self.radius, angle = np.meshgrid(self.r, self.theta, indexing='ij')
        self.cos = np.cos(angle)
        self.sin = np.sin(angle)
        self.y = np.stack([self.radius * self.cos, self.radius * self.sin])

        ring_weights, self.ell = self._ring_weights()
        self.weights = np.repeat(ring_weights[:, None] * self.dtheta, self.n_theta, axis=1)
        self.boundary_weights = np.full(self.n_theta, self.ell * self.dtheta)

        self._build_operators()
        logger.debug("DiskGrid %dx%d: dr=%.4g", self.n_r, self.n_theta, self.dr)

    def __repr__(self):
        return f"DiskGrid(n_r={self.n_r}, n_theta={self.n_theta})"

    @property
    def key(self):
        return (self.n_r, self.n_theta)

    def index(self, i, j):
        return i * self.n_theta + j

    def _ring_weights(self):
        """
        Radial quadrature weights and boundary arclength factor.

        The weights are the ones for which the adjoint of the radial stencil
        reproduces div(y) = 2 on every ring. Away from the pole they solve
        w[i+1] r[i+1] - w[i-1] r[i-1] = 4 dr w[i], whose growing solution is
        r dr; the pole ring replaces the missing inner flux by the antipodal
        one, giving w[1] r[1] + w[0] r[0] = 4 dr w[0]. The correction this
        forces near the pole alternates in sign and decays like i^-3.

        Returns:
            (weights per ring, ell) normalized so the weights integrate the
            unit disk exactly.
        """
        r, dr = self.r, self.dr
        n = self.n_r - 1
        w = np.empty(self.n_r)
        w[0] = 1.0
        w[1] = w[0] * (4.0 * dr - r[0]) / r[1]
        for i in range(1, n - 1):
            w[i + 1] = (4.0 * dr * w[i] + w[i - 1] * r[i - 1]) / r[i + 1]
        # boundary ring: first-order closure row, then the arclength closure
        w[n] = 2.0 * dr * w[n - 1] + 0.5 * w[n - 2] * r[n - 2]
        ell = 2.0 * w[n] + w[n] / dr + 0.5 * w[n - 1] * r[n - 1] / dr

        scale = 0.5 / np.sum(w)
        return w * scale, ell * scale

    def _build_operators(self):
        n_r, n_t, dr = self.n_r, self.n_theta, self.dr
        rows, cols, vals = [], [], []
        j = np.arange(n_t)

        def add(row, col, value):
            rows.append(row)
            cols.append(col)
            vals.append(np.full(n_t, value))

        # innermost ring: centred difference through the pole via the antipodal node
        add(self.index(0, j), self.index(1, j), 0.5 / dr)
        add(self.index(0, j), self.index(0, (j + n_t // 2) % n_t), -0.5 / dr)
        for i in range(1, n_r - 1):
            add(self.index(i, j), self.index(i + 1, j), 0.5 / dr)
            add(self.index(i, j), self.index(i - 1, j), -0.5 / dr)
        # first-order closure on the boundary ring (diagonal-norm SBP)
        add(self.index(n_r - 1, j), self.index(n_r - 1, j), 1.0 / dr)
        add(self.index(n_r - 1, j), self.index(n_r - 2, j), -1.0 / dr)

        self.d_r = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.size, self.size),
        )

        wavenumbers = np.fft.fftfreq(n_t, d=1.0 / n_t)
        wavenumbers[n_t // 2] = 0.0
        spectral = np.real(
            np.fft.ifft(1j * wavenumbers[:, None] * np.fft.fft(np.eye(n_t), axis=0), axis=0)
        )
        spectral = 0.5 * (spectral - spectral.T)
        spectral[np.abs(spectral) < 1e-15] = 0.0
        self.d_theta = sp.kron(sp.identity(n_r, format='csr'), sp.csr_matrix(spectral), format='csr')

        cos, sin, inv_r = self.cos.ravel(), self.sin.ravel(), (1.0 / self.radius).ravel()
        d1 = sp.diags(cos) @ self.d_r - sp.diags(sin * inv_r) @ self.d_theta
        d2 = sp.diags(sin) @ self.d_r + sp.diags(cos * inv_r) @ self.d_theta
        self.partial = (d1.tocsr(), d2.tocsr())
        self.partial_t = (d1.T.tocsr(), d2.T.tocsr())

    def sample(self, func):
        """Evaluate func(y1, y2) on every node."""
        return np.asarray(func(self.y[0], self.y[1]))

    def boundary(self, q):
        """Boundary-ring values of a scalar field."""
        return q[-1]


@dataclass(frozen=True)
class FlatMetric:
    """Identity metric with unit Jacobian; stands in for a frame in flat tests."""

    grid: DiskGrid
    kappa: np.ndarray = field(init=False)
    g: np.ndarray = field(init=False)
    g_inv: np.ndarray = field(init=False)
    normal_g: np.ndarray = field(init=False)

    def __post_init__(self):
        eye = np.zeros((2, 2) + self.grid.shape)
        eye[0, 0] = eye[1, 1] = 1.0
        object.__setattr__(self, 'kappa', np.ones(self.grid.shape))
        object.__setattr__(self, 'g', eye)
        object.__setattr__(self, 'g_inv', eye)
        object.__setattr__(self, 'normal_g', np.ones(self.grid.n_theta))

    @property
    def key(self):
        return ('flat', self.grid.key)


def flat_metric(grid):
    return FlatMetric(grid)


def _apply(matrix, q, shape):
    return (matrix @ q.reshape(-1)).reshape(shape)


def partials(grid, q):
    """Cartesian derivatives (d_1 q, d_2 q) of a scalar field."""
    return np.stack([_apply(grid.partial[a], q, grid.shape) for a in range(2)])


def vector_partials(grid, W):
    """Array dW[a, b] = d_b W^a."""
    return np.stack([partials(grid, W[a]) for a in range(2)])


def raise_index(frame, covector):
    return np.einsum('ab...,b...->a...', frame.g_inv, covector)


def lower_index(frame, W):
    return np.einsum('ab...,b...->a...', frame.g, W)


def gradient(grid, frame, q):
    """
    Lagrangian-frame gradient grad^a q = g^{ab} d_b q.

    Args:
        grid: DiskGrid
        frame: Object exposing g_inv (2, 2, n_r, n_theta)
        q: Scalar field

    Returns:
        Vector field of shape (2, n_r, n_theta)
    """
    return raise_index(frame, partials(grid, q))


def radial_component(grid, W):
    """Euclidean radial component cos(theta) W^1 + sin(theta) W^2."""
    return grid.cos * W[0] + grid.sin * W[1]


def flux_adjoint(grid, frame, W):
    """Sum over a of D_a^T (w kappa W^a), the transposed weighted gradient."""
    wk = grid.weights * frame.kappa
    out = sum(_apply(grid.partial_t[a], wk * W[a], grid.shape) for a in range(2))
    return out


def divergence(grid, frame, W):
    """
    Discrete divergence kappa^{-1} d_a(kappa W^a) as the negative adjoint of gradient.

    The boundary ring carries the closure term that makes the discrete
    divergence theorem exact.
    """
    wk = grid.weights * frame.kappa
    div = -flux_adjoint(grid, frame, W) / wk
    wr = radial_component(grid, W)[-1]
    div[-1] += grid.boundary_weights * frame.kappa[-1] * wr / wk[-1]
    return div


def corrected_normal_flux(grid, frame, W, div=None):
    """
    Summation-by-parts normal flux on the boundary ring.

    W^r minus (w_N / ell dtheta) div W, the quantity the transposed gradient
    sees on the boundary nodes.
    """
    if div is None:
        div = divergence(grid, frame, W)
    return radial_component(grid, W)[-1] - grid.weights[-1] / grid.boundary_weights * div[-1]


def clear_boundary_divergence(grid, frame, W):
    """
    Shift W^r on the boundary ring so that div W vanishes there exactly.

    A radial field supported on the boundary ring only enters the divergence
    of its own node, so the correction is pointwise.
    """
    unit = np.zeros(W.shape)
    unit[0, -1], unit[1, -1] = grid.cos[-1], grid.sin[-1]
    rate = divergence(grid, frame, unit)[-1]
    out = np.array(W, dtype=np.result_type(W, rate))
    out[:, -1] -= divergence(grid, frame, W)[-1] / rate * unit[:, -1]
    return out


def laplace_c(grid, frame, c, psi):
    """div(c grad psi) using the adjoint pair; boundary values of psi are Dirichlet data."""
    return divergence(grid, frame, c * gradient(grid, frame, psi))


def inner(grid, frame, U, W):
    """Volume inner product sum of g_ab U^a W^b kappa w."""
    wk = grid.weights * frame.kappa
    return float(np.real(np.sum(wk * np.einsum('a...,a...->...', U, lower_index(frame, W)))))


def scalar_inner(grid, frame, q, s):
    """Volume inner product sum of q s kappa w."""
    return float(np.real(np.sum(grid.weights * frame.kappa * q * s)))


def boundary_integral(grid, frame, s):
    """Boundary integral of a ring field s against the Eulerian arclength kappa |n|_g ds."""
    return float(np.real(np.sum(grid.boundary_weights * frame.kappa[-1] * frame.normal_g * s)))


def divergence_boundary_term(grid, frame, q, W):
    """Boundary side of the discrete divergence theorem: sum of q W_N dS."""
    wr = radial_component(grid, W)[-1]
    return float(np.real(np.sum(grid.boundary_weights * frame.kappa[-1] * q[-1] * wr)))


def integrals(grid, frame, first, second=None):
    """
    Dispatch to the matching quadrature by field rank.

    Vector fields use the metric inner product, scalar fields the kappa-weighted
    product, ring fields (n_theta,) the boundary integral.
    """
    if second is None:
        second = np.ones_like(first)
    first, second = np.asarray(first), np.asarray(second)
    if first.ndim == 3:
        return inner(grid, frame, first, second)
    if first.ndim == 2:
        return scalar_inner(grid, frame, first, second)
    if first.ndim == 1:
        return boundary_integral(grid, frame, first * second)
    raise DomainError(f"unsupported field rank {first.ndim}")


def normal_trace(grid, frame, W):
    """W_N = g_ab N^a W^b on the boundary ring, N the g-unit outward normal."""
    return radial_component(grid, W)[-1] / frame.normal_g


def _check_order(r):
    if r < 0 or r > MAX_NORM_ORDER:
        raise UnsupportedOrderError(f"norm order {r} not supported (0 <= r <= {MAX_NORM_ORDER})")


def h_norm(grid, frame, X, r):
    """
    Discrete H^r norm: quadrature norms of all Cartesian derivatives up to order r.

    Order zero of a vector field uses the metric inner product, so
    h_norm(W, 0) equals sqrt(<W, W>) exactly.
    """
    _check_order(r)
    X = np.asarray(X)
    wk = grid.weights * frame.kappa
    if X.ndim == 3:
        total = inner(grid, frame, X, X)
        components = [X[0], X[1]]
    else:
        total = scalar_inner(grid, frame, X, X)
        components = [X]
    layer = components
    for _ in range(r):
        layer = [d for comp in layer for d in partials(grid, comp)]
        total += sum(float(np.sum(wk * d * d)) for d in layer)
    return float(np.sqrt(max(total, 0.0)))


def boundary_norm(grid, frame, W, r):
    """
    H^r(boundary) norm of W_N through angular Fourier multipliers (1 + m^2)^(r/2).
    """
    _check_order(r)
    trace = normal_trace(grid, frame, W)
    density = np.sqrt(grid.ell * frame.kappa[-1] * frame.normal_g)
    coeffs = np.fft.fft(trace * density)
    m = np.fft.fftfreq(grid.n_theta, d=1.0 / grid.n_theta)
    total = grid.dtheta / grid.n_theta * np.sum((1.0 + m**2) ** r * np.abs(coeffs) ** 2)
    return float(np.sqrt(total))


def mixed_norm(grid, frame, fields, r, s=None):
    """
    sum over k <= s, k <= r of ||D_t^k X||_{H^(r-k)}, combined in quadrature.

    Args:
        fields: Sequence [X, D_t X, D_t^2 X, ...] supplied by the caller
        r: Total order
        s: Maximal number of time derivatives (defaults to r)
    """
    _check_order(r)
    s = r if s is None else s
    top = min(s, r, len(fields) - 1)
    total = sum(h_norm(grid, frame, fields[k], r - k) ** 2 for k in range(top + 1))
    return float(np.sqrt(total))


def triple_norm(grid, frame, fields, r):
    return mixed_norm(grid, frame, fields, r, r)


@dataclass(frozen=True)
class NormSet:
    h_r: float
    mixed: float
    triple: float
    boundary: float


def norms(grid, frame, fields, r):
    """
    All four norms of a vector field at one time.

    Args:
        fields: [W, D_t W, ...]; a bare vector field is accepted as [W]
        r: Order (0, 1 or 2)

    Returns:
        NormSet(h_r, mixed r,1 norm, triple norm, boundary norm)
    """
    _check_order(r)
    if isinstance(fields, np.ndarray) and fields.ndim == 3:
        fields = [fields]
    W = fields[0]
    return NormSet(
        h_r=h_norm(grid, frame, W, r),
        mixed=mixed_norm(grid, frame, fields, r, 1),
        triple=triple_norm(grid, frame, fields, r),
        boundary=boundary_norm(grid, frame, W, r),
    )


def random_polynomial(grid, rng, degree=3):
    """Scalar polynomial in (y1, y2) with standard normal coefficients."""
    y1, y2 = grid.y
    out = np.zeros(grid.shape)
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            out += rng.standard_normal() * y1**i * y2**j
    return out


def random_smooth_field(grid, rng, degree=3):
    """Vector field with random polynomial Cartesian components."""
    return np.stack([random_polynomial(grid, rng, degree) for _ in range(2)])
