"""Explicit time integrator for the rescaled anisotropic system.

One step = forward-Euler predictor for the three momentum components,
anisotropic pressure projection, then the concentration update.  The
epsilon^2 factor multiplying the vertical momentum equation is divided out
(legitimate for eps > 0), which moves the stiffness into the projection: the
pressure Poisson problem acquires the mobility A = diag(1, 1, eps^-2).  A
conjugate-gradient solver with a vertical line-relaxation preconditioner
(exact tridiagonal solves per column) handles that anisotropy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import BoundaryForcing, DiffusionTensor, Grid, PhysParams, coriolis_at
from .operators import (
    StaggeredVelocity,
    advect_scalar,
    advect_velocity,
    anisotropic_laplacian,
    apply_velocity_bcs,
    diffuse_concentration,
    divergence,
    extend_velocity,
)
from .sources import SourceSpec, evaluate_source

__all__ = [
    "SimState",
    "NumericsError",
    "ProjectionError",
    "CFLError",
    "stable_dt",
    "pressure_projection_anisotropic",
    "step_anisotropic",
]


class NumericsError(RuntimeError):
    """A run became numerically invalid (NaN/Inf or solver failure)."""


class ProjectionError(NumericsError):
    """The pressure solver did not reach its tolerance within max_iter."""


class CFLError(NumericsError):
    """A step was attempted with dt above the stability limit."""


@dataclass(frozen=True)
class SimState:
    """Simulation snapshot: time, step index, velocity, pressure, concentration.

    ``p`` is the 3-D rescaled pressure for the anisotropic solver and the 2-D
    surface pressure for the hydrostatic one.
    """

    t: float
    step: int
    u: StaggeredVelocity
    p: np.ndarray
    C: np.ndarray

    @classmethod
    def zeros(cls, grid: Grid, mode: str = "aniso") -> "SimState":
        p = np.zeros(grid.shape_cells) if mode == "aniso" else np.zeros((grid.nx, grid.ny))
        return cls(0.0, 0, StaggeredVelocity.zeros(grid), p, np.zeros(grid.shape_cells))

    def is_finite(self) -> bool:
        return bool(
            self.u.is_finite() and np.all(np.isfinite(self.p)) and np.all(np.isfinite(self.C))
        )


def stable_dt(
    state: SimState,
    params: PhysParams,
    M: DiffusionTensor,
    grid: Grid,
    cfl: float,
    dt_max: float = math.inf,
) -> float:
    """Explicit-step time limit.

    cfl times the minimum of the advective limits dx/|u1|max (etc.), the
    momentum diffusive limit 1/(2 sum nu_d/h_d^2), the concentration diffusive
    limit with tensor absolute row sums, and the rotation limit
    1/(|alpha|max + eps*|beta|max); capped by dt_max.
    """
    if not (0.0 < cfl <= 1.0):
        raise ValueError(f"cfl must lie in (0, 1], got {cfl!r}")
    dx, dy, dz = grid.spacing
    limits = [math.inf]

    for h, umax in zip((dx, dy, dz), state.u.max_abs()):
        if umax > 0.0:
            limits.append(h / umax)

    limits.append(1.0 / (2.0 * (params.nu1 / dx**2 + params.nu2 / dy**2 + params.nu3 / dz**2)))

    rows = [M.row_abs_sum(d) for d in range(3)]
    denom_c = 2.0 * (rows[0] / dx**2 + rows[1] / dy**2 + rows[2] / dz**2)
    if denom_c > 0.0:
        limits.append(1.0 / denom_c)

    x2 = np.concatenate([grid.x2c, grid.x2f])
    alpha, beta = coriolis_at(params, x2)
    denom_r = float(np.max(np.abs(alpha)) + params.eps * np.max(np.abs(beta)))
    if denom_r > 0.0:
        limits.append(1.0 / denom_r)

    return min(cfl * min(limits), dt_max)


# --------------------------------------------------------------------------
# Anisotropic pressure projection
# --------------------------------------------------------------------------

_workspace_cache: dict = {}


class _ProjectionWorkspace:
    """Precomputed operator data for one (grid, eps) pair.

    ``apply_spd`` evaluates -div(A grad p) with homogeneous Neumann walls via
    precomputed degree diagonals; ``apply_precond`` performs the vertical
    line relaxation (exact per-column tridiagonal solves, stored as batched
    dense inverses: only four distinct column types exist on a uniform grid).
    """

    def __init__(self, grid: Grid, eps: float):
        nx, ny, nz = grid.nx, grid.ny, grid.nz
        dx, dy, dz = grid.spacing
        self.dx2i = 1.0 / dx**2
        self.dy2i = 1.0 / dy**2
        self.wz = 1.0 / (eps**2 * dz**2)
        degx = np.where((np.arange(nx) == 0) | (np.arange(nx) == nx - 1), 1.0, 2.0)
        degy = np.where((np.arange(ny) == 0) | (np.arange(ny) == ny - 1), 1.0, 2.0)
        degz = np.where((np.arange(nz) == 0) | (np.arange(nz) == nz - 1), 1.0, 2.0)
        self.diag = (
            degx[:, None, None] * self.dx2i
            + degy[None, :, None] * self.dy2i
            + degz[None, None, :] * self.wz
        )

        def column_inverse(dgx: float, dgy: float) -> np.ndarray:
            t = np.zeros((nz, nz))
            for k in range(nz):
                dgz = 2.0 - (k == 0) - (k == nz - 1)
                t[k, k] = dgx * self.dx2i + dgy * self.dy2i + dgz * self.wz
                if k > 0:
                    t[k, k - 1] = -self.wz
                if k < nz - 1:
                    t[k, k + 1] = -self.wz
            return np.linalg.inv(t)

        inv = {(a, b): column_inverse(a, b) for a in (1.0, 2.0) for b in (1.0, 2.0)}
        blocks = np.empty((nx, ny, nz, nz))
        for a in (1.0, 2.0):
            for b in (1.0, 2.0):
                mask = (degx[:, None] == a) & (degy[None, :] == b)
                blocks[mask] = inv[(a, b)]
        self.blocks = blocks.reshape(nx * ny, nz, nz)
        self.shape = (nx, ny, nz)

    def apply_spd(self, p: np.ndarray) -> np.ndarray:
        """-div(A grad p): neighbour sums subtracted from the degree diagonal."""
        out = self.diag * p
        out[1:-1] -= (p[2:] + p[:-2]) * self.dx2i
        out[0] -= p[1] * self.dx2i
        out[-1] -= p[-2] * self.dx2i
        out[:, 1:-1] -= (p[:, 2:] + p[:, :-2]) * self.dy2i
        out[:, 0] -= p[:, 1] * self.dy2i
        out[:, -1] -= p[:, -2] * self.dy2i
        out[:, :, 1:-1] -= (p[:, :, 2:] + p[:, :, :-2]) * self.wz
        out[:, :, 0] -= p[:, :, 1] * self.wz
        out[:, :, -1] -= p[:, :, -2] * self.wz
        return out

    def apply_precond(self, r: np.ndarray) -> np.ndarray:
        nx, ny, nz = self.shape
        z = np.matmul(self.blocks, r.reshape(nx * ny, nz, 1))
        return z.reshape(nx, ny, nz)


def _workspace(grid: Grid, eps: float) -> _ProjectionWorkspace:
    key = grid.cache_key + (round(eps, 15),)
    hit = _workspace_cache.get(key)
    if hit is None:
        hit = _ProjectionWorkspace(grid, eps)
        if len(_workspace_cache) > 16:
            _workspace_cache.clear()
        _workspace_cache[key] = hit
    return hit


def _pcg(apply_a, apply_minv, b: np.ndarray, atol_inf: float, max_iter: int, x0=None):
    """Preconditioned CG for the SPD (on mean-zero fields) operator apply_a.

    Stops when max|r| <= atol_inf; returns (x, iterations, final residual).
    """
    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = x0 - x0.mean()
        r = b - apply_a(x)
    rinf = float(np.max(np.abs(r)))
    if rinf <= atol_inf:
        return x, 0, rinf
    z = apply_minv(r)
    z -= z.mean()
    pvec = z.copy()
    rz = float(np.vdot(r, z))
    for it in range(1, max_iter + 1):
        ap = apply_a(pvec)
        denom = float(np.vdot(pvec, ap))
        if denom <= 0.0:
            raise ProjectionError(f"CG breakdown at iteration {it} (curvature {denom:.3e})")
        alpha = rz / denom
        x += alpha * pvec
        r -= alpha * ap
        rinf = float(np.max(np.abs(r)))
        if rinf <= atol_inf:
            return x, it, rinf
        z = apply_minv(r)
        z -= z.mean()
        rz_new = float(np.vdot(r, z))
        pvec = z + (rz_new / rz) * pvec
        rz = rz_new
    raise ProjectionError(
        f"pressure solver stalled: residual {rinf:.3e} > target {atol_inf:.3e} "
        f"after {max_iter} iterations"
    )


def pressure_projection_anisotropic(
    u_star: StaggeredVelocity,
    eps: float,
    dt: float,
    grid: Grid,
    tol: float = 1e-8,
    max_iter: int = 4000,
    p0: np.ndarray | None = None,
):
    """Project u* onto the discretely divergence-free space.

    Solves div(A grad p) = div(u*)/dt with A = diag(1, 1, eps^-2) and
    homogeneous Neumann walls, then corrects u1 -= dt*d1p, u2 -= dt*d2p,
    u3 -= dt*eps^-2*d3p on interior faces.  p is returned mean-zero.  The
    stopping rule targets the post-correction divergence directly:
    dt*max|residual| <= tol.  An optional initial guess p0 (e.g. the previous
    step's pressure) warm-starts the conjugate-gradient iteration.

    Returns (u, p, info) with info = {"iterations", "max_div"}.
    """
    if not (tol > 0 and dt > 0 and 0 < eps <= 1):
        raise ValueError("tol, dt must be positive and eps in (0, 1]")
    dx, dy, dz = grid.spacing

    div_star = divergence(u_star, grid)
    mean = float(np.mean(div_star))
    # Compatibility: the mean divergence is the net boundary flux per volume.
    # Measure it against the natural divergence magnitude of an O(|u|) field,
    # so an already-projected input (divergence at roundoff) still passes.
    m1, m2, m3 = u_star.max_abs()
    scale = m1 / grid.dx + m2 / grid.dy + m3 / grid.dz
    if scale > 0 and abs(mean) > 1e-10 * scale:
        raise ProjectionError(
            f"incompatible right-hand side: mean divergence {mean:.3e} "
            f"(velocity divergence scale {scale:.3e})"
        )

    b = -(div_star - mean) / dt
    ws = _workspace(grid, eps)
    p, iters, rinf = _pcg(
        ws.apply_spd, ws.apply_precond, b, atol_inf=tol / dt, max_iter=max_iter, x0=p0
    )
    p -= p.mean()

    u1 = u_star.u1.copy()
    u2 = u_star.u2.copy()
    u3 = u_star.u3.copy()
    u1[1:-1] -= dt * (p[1:] - p[:-1]) / dx
    u2[:, 1:-1] -= dt * (p[:, 1:] - p[:, :-1]) / dy
    u3[:, :, 1:-1] -= dt * (p[:, :, 1:] - p[:, :, :-1]) / (eps**2 * dz)
    u_new = StaggeredVelocity(u1, u2, u3)
    info = {"iterations": iters, "max_div": dt * rinf}
    return u_new, p, info


# --------------------------------------------------------------------------
# Time step
# --------------------------------------------------------------------------


def _interp_u2_to_u1(u2: np.ndarray) -> np.ndarray:
    return 0.25 * (u2[:-1, :-1] + u2[:-1, 1:] + u2[1:, :-1] + u2[1:, 1:])


def _interp_u3_to_u1(u3: np.ndarray) -> np.ndarray:
    return 0.25 * (u3[:-1, :, :-1] + u3[:-1, :, 1:] + u3[1:, :, :-1] + u3[1:, :, 1:])


def _interp_u1_to_u2(u1: np.ndarray) -> np.ndarray:
    return 0.25 * (u1[:-1, :-1] + u1[1:, :-1] + u1[:-1, 1:] + u1[1:, 1:])


def _interp_u1_to_u3(u1: np.ndarray) -> np.ndarray:
    return 0.25 * (u1[:-1, :, :-1] + u1[1:, :, :-1] + u1[:-1, :, 1:] + u1[1:, :, 1:])


def step_anisotropic(
    state: SimState,
    params: PhysParams,
    M: DiffusionTensor,
    theta: BoundaryForcing | None,
    source: SourceSpec | None,
    dt: float,
    grid: Grid,
    tol: float = 1e-8,
    max_iter: int = 4000,
    scheme: str = "upwind1",
    forcing=None,
    p_guess: np.ndarray | None = None,
) -> SimState:
    """Advance the anisotropic state by one explicit step.

    Predictor signs follow the momentum equations: the u1 equation carries
    -alpha*u2 + eps*beta*u3, the u2 equation +alpha*u1, and the u3 equation
    (divided through by eps^2) gains +(beta/eps)*u1 while its pressure term
    moves into the projection.  The concentration then advects with the
    projected velocity:  C += dt * (-u.grad C + div(M grad C) + S(t)).

    ``forcing`` is an optional callable t -> (f1, f2, f3, fC) of extra
    face/cell forcings (manufactured-solution hook).
    """
    eps = params.eps
    if dt > stable_dt(state, params, M, grid, cfl=1.0) * (1.0 + 1e-9):
        raise CFLError(f"dt={dt:.3e} exceeds the stability limit at step {state.step}")

    u = apply_velocity_bcs(state.u, theta, params.nu3, grid, mode="anisotropic")
    ext = extend_velocity(u, theta, params.nu3, grid, mode="anisotropic")
    adv = advect_velocity(u, grid, scheme=scheme, ext=ext)
    lap1 = anisotropic_laplacian(ext.u1e, params.nu, grid)
    lap2 = anisotropic_laplacian(ext.u2e, params.nu, grid)
    lap3 = anisotropic_laplacian(ext.u3e, params.nu, grid)

    alpha_c, beta_c = coriolis_at(params, grid.x2c)
    alpha_f, _ = coriolis_at(params, grid.x2f)

    u1s = u.u1.copy()
    u2s = u.u2.copy()
    u3s = u.u3.copy()
    u1s[1:-1] += dt * (
        -adv.u1[1:-1]
        + lap1[1:-1]
        + alpha_c[None, :, None] * _interp_u2_to_u1(u.u2)
        - eps * beta_c[None, :, None] * _interp_u3_to_u1(u.u3)
    )
    u2s[:, 1:-1] += dt * (
        -adv.u2[:, 1:-1]
        + lap2[:, 1:-1]
        - alpha_f[None, 1:-1, None] * _interp_u1_to_u2(u.u1)
    )
    u3s[:, :, 1:-1] += dt * (
        -adv.u3[:, :, 1:-1]
        + lap3[:, :, 1:-1]
        + (beta_c[None, :, None] / eps) * _interp_u1_to_u3(u.u1)
    )
    if forcing is not None:
        f1, f2, f3, _ = forcing(state.t, grid)
        u1s[1:-1] += dt * f1[1:-1]
        u2s[:, 1:-1] += dt * f2[:, 1:-1]
        u3s[:, :, 1:-1] += dt * f3[:, :, 1:-1]

    u_star = apply_velocity_bcs(
        StaggeredVelocity(u1s, u2s, u3s), theta, params.nu3, grid, mode="anisotropic"
    )
    if p_guess is None:
        p_guess = state.p if state.p.shape == grid.shape_cells else None
    u_new, p, _ = pressure_projection_anisotropic(
        u_star, eps, dt, grid, tol, max_iter, p0=p_guess
    )

    rhs_c = -advect_scalar(u_new, state.C, grid, scheme) + diffuse_concentration(
        state.C, M, grid
    )
    if source is not None:
        rhs_c = rhs_c + evaluate_source(source, state.t, grid)
    if forcing is not None:
        rhs_c = rhs_c + forcing(state.t, grid)[3]
    c_new = state.C + dt * rhs_c

    new = SimState(t=state.t + dt, step=state.step + 1, u=u_new, p=p, C=c_new)
    if not new.is_finite():
        raise NumericsError(f"non-finite state after step {new.step}")
    return new
