"""Uniform 1D grid on (0, L) with homogeneous Dirichlet boundary.

Fields ("grid functions") are plain float arrays holding the values at the
``n_cells - 1`` interior nodes; the two boundary values are implicitly zero.
All spatial norms, the discrete Laplacian and the spectral/embedding
constants used by the stability analysis live here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack

from .errors import InvalidArgument, NumericalFailure

__all__ = [
    "Grid1D",
    "GridSpectrum",
    "make_grid",
    "check_field",
    "laplacian_apply",
    "solve_shifted_laplacian",
    "norm",
    "seminorm_h1",
    "inner",
    "inner_h1",
    "estimate_lambda1",
    "discrete_lambda1",
    "estimate_embedding_constant",
    "embedding_upper_bound",
    "grid_spectrum",
]


@dataclass(frozen=True)
class Grid1D:
    length: float
    n_cells: int

    @property
    def h(self) -> float:
        return self.length / self.n_cells

    @property
    def n_interior(self) -> int:
        return self.n_cells - 1

    @property
    def nodes(self) -> np.ndarray:
        """Coordinates of the interior nodes."""
        return self.h * np.arange(1, self.n_cells)

    def sample(self, fn) -> np.ndarray:
        """Evaluate ``fn(x)`` at the interior nodes."""
        values = np.asarray(fn(self.nodes), dtype=float)
        return np.broadcast_to(values, (self.n_interior,)).copy()

    def zeros(self) -> np.ndarray:
        return np.zeros(self.n_interior)


def make_grid(length: float = 1.0, n_cells: int = 100) -> Grid1D:
    if not (length > 0) or not math.isfinite(length):
        raise InvalidArgument(f"domain length must be positive, got {length!r}")
    if int(n_cells) != n_cells or n_cells < 2:
        raise InvalidArgument(f"n_cells must be an integer >= 2, got {n_cells!r}")
    return Grid1D(float(length), int(n_cells))


def check_field(grid: Grid1D, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (grid.n_interior,):
        raise InvalidArgument(
            f"field has shape {u.shape}, grid expects ({grid.n_interior},)"
        )
    if not np.all(np.isfinite(u)):
        raise InvalidArgument("field contains non-finite values")
    return u


def laplacian_apply(grid: Grid1D, u) -> np.ndarray:
    """Second-order central difference with zero ghost values."""
    u = check_field(grid, u)
    out = -2.0 * u
    out[1:] += u[:-1]
    out[:-1] += u[1:]
    out *= 1.0 / grid.h**2
    return out


def solve_shifted_laplacian(grid: Grid1D, d, rhs) -> np.ndarray:
    """Solve ``(diag(d) + A_h) x = rhs`` where ``A_h = -Laplacian_h``.

    The matrix is symmetric positive definite for any ``d >= 0`` so the
    LAPACK SPD tridiagonal solver (``?ptsv``) is used.
    """
    d = np.asarray(d, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    n = grid.n_interior
    if d.shape != (n,) or rhs.shape != (n,):
        raise InvalidArgument("diagonal and right-hand side must match the grid")
    if np.any(d < 0):
        raise InvalidArgument("shifted Laplacian needs a nonnegative diagonal")
    inv_h2 = 1.0 / grid.h**2
    diag = d + 2.0 * inv_h2
    if n == 1:
        return rhs / diag
    off = np.full(n - 1, -inv_h2)
    _, _, x, info = lapack.dptsv(diag, off, rhs)
    if info != 0:
        raise NumericalFailure(f"dptsv failed with info={info}")
    return x


def norm(grid: Grid1D, u, q: float = 2.0) -> float:
    """L^q norm by the composite trapezoid rule (boundary values are zero).

    ``q = math.inf`` gives the maximum norm.
    """
    u = np.asarray(u, dtype=float)
    if q == math.inf:
        return float(np.max(np.abs(u))) if u.size else 0.0
    if not q >= 1:
        raise InvalidArgument(f"norm exponent must be >= 1, got {q!r}")
    a = np.abs(u)
    if q == 2:
        s = float(a @ a)
    else:
        s = float(np.sum(a**q))
    return (grid.h * s) ** (1.0 / q)


def seminorm_h1(grid: Grid1D, u) -> float:
    """||grad u||_2 from forward differences over all n_cells intervals."""
    return math.sqrt(grad_sq(np.asarray(u, dtype=float), grid.h))


def grad_sq(u: np.ndarray, h: float) -> float:
    """``||grad u||_2^2`` for an interior-node array; the boundary jumps are ``u[0]``
    and ``u[-1]``."""
    du = u[1:] - u[:-1]
    return (float(du @ du) + u[0] * u[0] + u[-1] * u[-1]) / h


def inner(grid: Grid1D, u, v) -> float:
    return grid.h * float(np.dot(u, v))


def inner_h1(grid: Grid1D, u, v) -> float:
    du = np.diff(np.asarray(u, dtype=float), prepend=0.0, append=0.0)
    dv = np.diff(np.asarray(v, dtype=float), prepend=0.0, append=0.0)
    return float(du @ dv) / grid.h


def discrete_lambda1(grid: Grid1D) -> float:
    """Closed-form smallest eigenvalue of A_h."""
    return (2.0 / grid.h**2) * (1.0 - math.cos(math.pi * grid.h / grid.length))


def estimate_lambda1(grid: Grid1D, tol: float = 1e-14, max_iter: int = 500):
    """Smallest eigenvalue of A_h by inverse power iteration.

    Returns ``(lambda1, info)`` where ``info`` records iterations and the
    final relative change of the Rayleigh quotient.
    """
    x = grid.nodes
    v = x * (grid.length - x) + 0.1 * x**3 * (grid.length - x)
    v /= np.linalg.norm(v)
    zero = grid.zeros()
    lam = math.inf
    change = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        w = solve_shifted_laplacian(grid, zero, v)
        lam_new = float(v @ v) / float(v @ w)
        v = w / np.linalg.norm(w)
        change = abs(lam_new - lam) / lam_new
        lam = lam_new
        if change < tol:
            break
    return lam, {"iterations": it, "residual": change, "converged": change < tol}


def embedding_upper_bound(length: float, q: float) -> float:
    """Analytic 1D bound: ||u||_q <= L^(1/q) ||u||_inf <= L^(1/q) sqrt(L)/2 ||u'||_2."""
    return length ** (1.0 / q) * math.sqrt(length) / 2.0


def estimate_embedding_constant(
    grid: Grid1D, q: float, tol: float = 1e-12, max_iter: int = 5000
):
    """Best constant in ||u||_q <= c ||grad u||_2 over discrete fields.

    Projected Sobolev-gradient ascent of ``||u||_q^q`` on the sphere
    ``||grad u||_2 = 1``: each step moves to the sphere point maximizing the
    linearized objective, i.e. the normalized H^1 Riesz representative
    ``A_h^{-1}(|u|^{q-2} u)`` of the gradient.  The objective is convex so
    the ratio increases monotonically.  Starts from ``sin(pi x / L)``.

    Returns ``(value, info)``; ``value`` is a lower bound on the discrete
    optimum even when the iteration cap is hit.
    """
    if not q >= 2:
        raise InvalidArgument(f"embedding exponent must be >= 2, got {q!r}")
    zero = grid.zeros()
    u = np.sin(math.pi * grid.nodes / grid.length)
    u /= seminorm_h1(grid, u)
    best = norm(grid, u, q)
    change = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        w = solve_shifted_laplacian(grid, zero, np.abs(u) ** (q - 2) * u)
        w /= seminorm_h1(grid, w)
        val = norm(grid, w, q)
        change = (val - best) / val
        u = w
        if val > best:
            best = val
        if abs(change) < tol:
            break
    return best, {
        "iterations": it,
        "residual": abs(change),
        "converged": abs(change) < tol,
        "method": "projected Sobolev-gradient ascent",
    }


@dataclass
class GridSpectrum:
    lambda1: float
    c_s_for_p: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def c_s(self, q: float) -> float:
        return self.c_s_for_p[float(q)]


def grid_spectrum(grid: Grid1D, exponents=(), tol: float = 1e-12) -> GridSpectrum:
    lam, info = estimate_lambda1(grid)
    spec = GridSpectrum(lam, {}, {"lambda1": info, "source": "discrete estimate"})
    for q in exponents:
        q = float(q)
        if q in spec.c_s_for_p:
            continue
        c, cinfo = estimate_embedding_constant(grid, q, tol=tol)
        spec.c_s_for_p[q] = c
        spec.metadata[f"c_s({q:g})"] = cinfo
    return spec
