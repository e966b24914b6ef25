"""Finite-difference solver for steady-state heat conduction with sources.

Discretization is the 5-point finite-volume stencil on the grid nodes with
harmonic-mean face conductivities:

    (1/hx^2) [lam_e (T_E - T_C) + lam_w (T_W - T_C)]
  + (1/hy^2) [lam_n (T_N - T_C) + lam_s (T_S - T_C)] + phi = 0

Dirichlet sides pin node values to the side profile. Neumann sides impose
zero normal flux through ghost-node reflection. Robin sides eliminate the
ghost node against the Newton-cooling relation, flux out = h (T - T0).
Temperature-dependent conductivity is handled by Picard iteration: solve the
linear system with lambda frozen at the previous iterate and repeat until the
max-norm change falls below tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .domain import SIDES, BoundarySpec, ConductivityModel, Grid, HeatSource, ScalarField

__all__ = [
    "SolveOptions",
    "SolveReport",
    "SolverError",
    "source_density",
    "source_grid",
    "solve_steady",
    "solve_steady_grid",
    "pde_residual",
    "pde_residual_grid",
]


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolveOptions:
    linear_tol: float = 1e-9  # relative residual required of the linear solve
    nonlinear_tol: float = 1e-8  # max-norm Picard increment, Kelvin
    max_picard: int = 100


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    linear_residual: float
    nonlinear_delta: float
    converged: bool
    delta_history: tuple[float, ...] = ()


def source_density(src: HeatSource, x, y):
    """Power density of one source at (x, y); accepts scalars or arrays."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x_lo, y_lo, x_hi, y_hi = src.region
    inside = (x >= x_lo) & (x <= x_hi) & (y >= y_lo) & (y <= y_hi)
    if src.kind == "uniform":
        out = np.where(inside, src.q, 0.0)
    else:
        x0, y0 = src.center
        arg = src.sigma_g * ((x - x0) ** 2 + (y - y0) ** 2) / src.radius**2
        out = np.where(inside, src.q * np.exp(-arg), 0.0)
    return out if out.ndim else float(out)


def source_grid(grid: Grid, sources) -> np.ndarray:
    """Total power density rasterized at the grid nodes, shape (ny, nx)."""
    gx, gy = grid.node_coords()
    phi = np.zeros((grid.ny, grid.nx))
    for src in sources:
        phi += source_density(src, gx, gy)
    return phi


def _dirichlet_mask_and_values(grid: Grid, boundary: BoundarySpec):
    """Boolean mask of pinned nodes and their values.

    When two dirichlet sides share a corner the side listed first in SIDES
    wins; sine profiles are zero at the corners so the catalog scenarios stay
    continuous either way.
    """
    mask = np.zeros((grid.ny, grid.nx), dtype=bool)
    vals = np.zeros((grid.ny, grid.nx))
    for name in reversed(SIDES):
        side = boundary.side(name)
        if side.kind != "dirichlet":
            continue
        if name in ("left", "right"):
            s = grid.ys()
            profile = side.dirichlet_values(s, grid.ly)
            j = 0 if name == "left" else grid.nx - 1
            mask[:, j] = True
            vals[:, j] = profile
        else:
            s = grid.xs()
            profile = side.dirichlet_values(s, grid.lx)
            i = 0 if name == "bottom" else grid.ny - 1
            mask[i, :] = True
            vals[i, :] = profile
    return mask, vals


def _harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 2.0 * a * b / (a + b)


def _face_conductivities(lam: np.ndarray):
    """Harmonic-mean conductivities on east and north faces.

    lam_e[i, j] couples node (i, j) with (i, j+1); lam_n[i, j] couples
    (i, j) with (i+1, j).
    """
    lam_e = _harmonic(lam[:, :-1], lam[:, 1:])
    lam_n = _harmonic(lam[:-1, :], lam[1:, :])
    return lam_e, lam_n


def _assemble(grid: Grid, lam: np.ndarray, phi: np.ndarray, boundary: BoundarySpec):
    """Build A T = b for the linear problem with conductivity field lam."""
    nx, ny = grid.nx, grid.ny
    ax = 1.0 / grid.hx**2
    ay = 1.0 / grid.hy**2
    lam_e, lam_n = _face_conductivities(lam)
    pin_mask, pin_vals = _dirichlet_mask_and_values(grid, boundary)

    n = nx * ny
    diag = np.zeros((ny, nx))
    b = phi.copy()

    # Coefficient maps toward each neighbor; doubled at reflected boundaries.
    c_e = np.zeros((ny, nx))
    c_w = np.zeros((ny, nx))
    c_n = np.zeros((ny, nx))
    c_s = np.zeros((ny, nx))
    c_e[:, :-1] = ax * lam_e
    c_w[:, 1:] = ax * lam_e
    c_n[:-1, :] = ay * lam_n
    c_s[1:, :] = ay * lam_n

    def _ghost(side_name, toward, normal_len):
        # Zero-flux reflection doubles the inward coupling; Robin adds the
        # eliminated convective term to diagonal and rhs.
        side = boundary.side(side_name)
        if side.kind == "dirichlet":
            return
        if side_name == "left":
            sel = (slice(None), 0)
        elif side_name == "right":
            sel = (slice(None), nx - 1)
        elif side_name == "bottom":
            sel = (0, slice(None))
        else:
            sel = (ny - 1, slice(None))
        toward[sel] = 2.0 * toward[sel]
        if side.kind == "robin":
            h_over = 2.0 * side.h / normal_len
            diag[sel] += h_over
            b[sel] += h_over * side.t0

    _ghost("left", c_e, grid.hx)
    _ghost("right", c_w, grid.hx)
    _ghost("bottom", c_n, grid.hy)
    _ghost("top", c_s, grid.hy)

    diag += c_e + c_w + c_n + c_s

    # Pinned nodes become identity rows; couplings into them move to the rhs.
    idx = np.arange(n).reshape(ny, nx)
    rows, cols, data = [], [], []

    def _add_offdiag(coef, di, dj):
        src_i, src_j = np.nonzero(coef)
        keep = ~pin_mask[src_i, src_j]
        src_i, src_j = src_i[keep], src_j[keep]
        dst_i, dst_j = src_i + di, src_j + dj
        dst_pinned = pin_mask[dst_i, dst_j]
        free = ~dst_pinned
        rows.append(idx[src_i[free], src_j[free]])
        cols.append(idx[dst_i[free], dst_j[free]])
        data.append(-coef[src_i[free], src_j[free]])
        # coupling to a pinned node contributes coef * T_pin to the rhs
        bi, bj = src_i[dst_pinned], src_j[dst_pinned]
        np.add.at(b, (bi, bj), coef[bi, bj] * pin_vals[bi + di, bj + dj])

    _add_offdiag(c_e, 0, 1)
    _add_offdiag(c_w, 0, -1)
    _add_offdiag(c_n, 1, 0)
    _add_offdiag(c_s, -1, 0)

    diag_full = np.where(pin_mask, 1.0, diag)
    b = np.where(pin_mask, pin_vals, b)
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    data.append(diag_full.ravel())

    a_mat = sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return a_mat, b.ravel()


def _linear_solve(a_mat, b, tol):
    """Direct sparse solve with one step of iterative refinement."""
    lu = spla.splu(a_mat.tocsc())
    x = lu.solve(b)
    r = b - a_mat @ x
    x = x + lu.solve(r)
    b_norm = np.linalg.norm(b)
    rel = np.linalg.norm(b - a_mat @ x) / b_norm if b_norm > 0 else np.linalg.norm(b - a_mat @ x)
    if not np.isfinite(rel) or rel > tol:
        raise SolverError(f"linear solve residual {rel:.3e} exceeds tolerance {tol:.1e}")
    return x, rel


def _check_solvable(boundary: BoundarySpec):
    kinds = set(boundary.kinds().values())
    if kinds == {"neumann"}:
        raise SolverError("all-Neumann problem is singular; pin at least one side")


def _initial_iterate(grid: Grid, boundary: BoundarySpec) -> np.ndarray:
    pin_mask, pin_vals = _dirichlet_mask_and_values(grid, boundary)
    t0 = float(np.mean(pin_vals[pin_mask])) if pin_mask.any() else 298.0
    return np.full((grid.ny, grid.nx), t0)


def solve_steady_grid(
    grid: Grid,
    phi: np.ndarray,
    boundary: BoundarySpec,
    cond: ConductivityModel,
    opts: SolveOptions = SolveOptions(),
) -> tuple[ScalarField, SolveReport]:
    """Solve with an arbitrary node-sampled source density phi of shape (ny, nx)."""
    _check_solvable(boundary)
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (grid.ny, grid.nx):
        raise ValueError(f"source grid shape {phi.shape} does not match {(grid.ny, grid.nx)}")

    t = _initial_iterate(grid, boundary)
    deltas: list[float] = []
    lin_res = np.inf
    if cond.kind == "constant":
        lam = cond.evaluate(t)
        a_mat, b = _assemble(grid, lam, phi, boundary)
        x, lin_res = _linear_solve(a_mat, b, opts.linear_tol)
        t = x.reshape(grid.ny, grid.nx)
        deltas.append(0.0)
        converged = True
        iterations = 1
    else:
        converged = False
        iterations = 0
        for _ in range(opts.max_picard):
            iterations += 1
            lam = cond.evaluate(t)
            if np.min(lam) <= 0:
                raise SolverError(
                    f"conductivity became non-positive (min {np.min(lam):.3e}) during Picard"
                )
            a_mat, b = _assemble(grid, lam, phi, boundary)
            x, lin_res = _linear_solve(a_mat, b, opts.linear_tol)
            t_new = x.reshape(grid.ny, grid.nx)
            delta = float(np.max(np.abs(t_new - t)))
            deltas.append(delta)
            t = t_new
            if delta <= opts.nonlinear_tol:
                converged = True
                break

    report = SolveReport(
        iterations=iterations,
        linear_residual=float(lin_res),
        nonlinear_delta=deltas[-1],
        converged=converged,
        delta_history=tuple(deltas),
    )
    return ScalarField(grid, t), report


def solve_steady(
    grid: Grid,
    sources,
    boundary: BoundarySpec,
    cond: ConductivityModel,
    opts: SolveOptions = SolveOptions(),
) -> tuple[ScalarField, SolveReport]:
    return solve_steady_grid(grid, source_grid(grid, sources), boundary, cond, opts)


def pde_residual_grid(
    fld: ScalarField, phi: np.ndarray, boundary: BoundarySpec, cond: ConductivityModel
) -> float:
    """Max-norm residual of the discrete operator at interior nodes.

    Differences are formed before scaling by 1/h^2 to keep float noise near
    the representable floor.
    """
    grid = fld.grid
    t = np.asarray(fld.values, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if phi.shape != t.shape:
        raise ValueError("source grid shape does not match the field")
    lam = cond.evaluate(t)
    lam_e, lam_n = _face_conductivities(lam)
    ax = 1.0 / grid.hx**2
    ay = 1.0 / grid.hy**2

    flux_x = lam_e * (t[:, 1:] - t[:, :-1])  # (ny, nx-1)
    flux_y = lam_n * (t[1:, :] - t[:-1, :])  # (ny-1, nx)
    res = (
        ax * (flux_x[1:-1, 1:] - flux_x[1:-1, :-1])
        + ay * (flux_y[1:, 1:-1] - flux_y[:-1, 1:-1])
        + phi[1:-1, 1:-1]
    )
    return float(np.max(np.abs(res)))


def pde_residual(fld: ScalarField, sources, boundary: BoundarySpec, cond: ConductivityModel) -> float:
    return pde_residual_grid(fld, source_grid(fld.grid, sources), boundary, cond)
