"""Hamiltonian ray tracing for variable-coefficient wave operators.

Works with the principal symbol of  rho(x) u_tt - div(K(x) grad u):

    p(t, x, tau, xi)  = -rho tau^2 + xi.K xi          (full symbol)
    ptilde            = (-tau^2 + xi.(K/rho) xi) / 2  (normalized)

Both are conserved along their own Hamiltonian flows.  The normalized
flow moves at unit rate in physical time when tau = -1, which makes ray
arrival times directly comparable with simulation time; its spatial
projections are geodesics of the metric G = (K/rho)^(-1), traversed at
speed |xdot|_G = |tau|.

The entry-time scan answers the geometric control question numerically:
for a bundle of rays, how long before each one meets the damping region,
and what is the worst case.  Constant media use exact reflected straight
lines (triangle-wave folding of the free motion); variable media follow
the integrated flow until it leaves the box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class DegenerateDirection(Exception):
    """Cannot build a null covector: direction has no propagation speed."""


class LeftDomain(Exception):
    """Ray exited the integration box before finishing.

    ``entered_omega_at`` holds the entry time recorded before the exit
    (or None), so callers scoring control times keep a hit that happened
    on the way out.
    """

    entered_omega_at: float | None = None


# ---------------------------------------------------------------------------
# media
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MediumFields:
    """Coefficient fields rho(x) > 0 and symmetric K(x), with gradients.

    rho maps (d,) -> float; kmat maps (d,) -> (d, d).  grad_rho gives the
    gradient vector, grad_kmat the stacked matrices dK/dx_k indexed [k].
    Missing gradients fall back to centered differences.
    """

    dim: int
    rho: Callable[[np.ndarray], float]
    kmat: Callable[[np.ndarray], np.ndarray]
    grad_rho: Callable[[np.ndarray], np.ndarray] | None = None
    grad_kmat: Callable[[np.ndarray], np.ndarray] | None = None
    is_constant: bool = False

    def rho_at(self, x) -> float:
        return float(self.rho(np.asarray(x, float)))

    def kmat_at(self, x) -> np.ndarray:
        return np.asarray(self.kmat(np.asarray(x, float)), float)

    def grad_rho_at(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        if self.grad_rho is not None:
            return np.asarray(self.grad_rho(x), float)
        out = np.zeros(self.dim)
        for k in range(self.dim):
            h = 1e-6 * (1.0 + abs(x[k]))
            xp, xm = x.copy(), x.copy()
            xp[k] += h
            xm[k] -= h
            out[k] = (self.rho_at(xp) - self.rho_at(xm)) / (2.0 * h)
        return out

    def grad_kmat_at(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        if self.grad_kmat is not None:
            return np.asarray(self.grad_kmat(x), float)
        out = np.zeros((self.dim, self.dim, self.dim))
        for k in range(self.dim):
            h = 1e-6 * (1.0 + abs(x[k]))
            xp, xm = x.copy(), x.copy()
            xp[k] += h
            xm[k] -= h
            out[k] = (self.kmat_at(xp) - self.kmat_at(xm)) / (2.0 * h)
        return out

    def slowness_matrix(self, x) -> np.ndarray:
        """K/rho at x."""
        return self.kmat_at(x) / self.rho_at(x)

    def grad_slowness(self, x) -> np.ndarray:
        """d(K/rho)/dx_k stacked over k."""
        r = self.rho_at(x)
        km = self.kmat_at(x)
        gr = self.grad_rho_at(x)
        gk = self.grad_kmat_at(x)
        return gk / r - km[None, :, :] * (gr / r ** 2)[:, None, None]


def constant_medium(dim: int, rho: float = 1.0, k_diag=None) -> MediumFields:
    """Homogeneous medium; k_diag defaults to the identity."""
    if k_diag is None:
        k_diag = (1.0,) * dim
    km = np.diag(np.asarray(k_diag, float))
    return MediumFields(
        dim=dim,
        rho=lambda x, r=float(rho): r,
        kmat=lambda x, m=km: m,
        grad_rho=lambda x, d=dim: np.zeros(d),
        grad_kmat=lambda x, d=dim: np.zeros((d, d, d)),
        is_constant=True,
    )


def radial_medium(dim: int) -> MediumFields:
    """rho = 1 + |x|^2/4 with K = I: an isotropic focusing test medium."""
    eye = np.eye(dim)
    return MediumFields(
        dim=dim,
        rho=lambda x: 1.0 + 0.25 * float(np.dot(x, x)),
        kmat=lambda x, m=eye: m,
        grad_rho=lambda x: 0.5 * np.asarray(x, float),
        grad_kmat=lambda x, d=dim: np.zeros((d, d, d)),
    )


def diagonal_medium(dim: int, speeds=None, beta: float = 0.25) -> MediumFields:
    """rho = 1, K = diag(speeds) (1 + beta |x|^2 / 4): anisotropic, variable."""
    if speeds is None:
        speeds = (1.0,) * dim
    cs = np.asarray(speeds, float)

    def km(x):
        return np.diag(cs) * (1.0 + 0.25 * beta * float(np.dot(x, x)))

    def gkm(x):
        out = np.zeros((dim, dim, dim))
        for k in range(dim):
            out[k] = np.diag(cs) * (0.5 * beta * float(x[k]))
        return out

    return MediumFields(
        dim=dim,
        rho=lambda x: 1.0,
        kmat=km,
        grad_rho=lambda x, d=dim: np.zeros(d),
        grad_kmat=gkm,
    )


def medium_from_callables(dim: int, rho, kmat, grad_rho=None,
                          grad_kmat=None) -> MediumFields:
    return MediumFields(dim=dim, rho=rho, kmat=kmat,
                        grad_rho=grad_rho, grad_kmat=grad_kmat)


# ---------------------------------------------------------------------------
# phase space
# ---------------------------------------------------------------------------

@dataclass
class PhasePoint:
    t: float
    x: np.ndarray
    tau: float
    xi: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, float))
        self.xi = np.atleast_1d(np.asarray(self.xi, float))
        if self.tau == 0.0 and not np.any(self.xi):
            raise ValueError("covector (tau, xi) must be nonzero")


@dataclass(frozen=True)
class Box:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if len(self.lo) != len(self.hi):
            raise ValueError("lo and hi must have the same dimension")
        if any(a >= b for a, b in zip(self.lo, self.hi)):
            raise ValueError("need lo < hi per axis")

    @property
    def dim(self) -> int:
        return len(self.lo)

    def contains(self, x) -> bool:
        x = np.atleast_1d(np.asarray(x, float))
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))


@dataclass
class RayPath:
    """Sampled bicharacteristic: arrays indexed by step along the ray."""

    s: np.ndarray
    t: np.ndarray
    x: np.ndarray       # (n, d)
    tau: float
    xi: np.ndarray      # (n, d)
    ptilde: np.ndarray
    entered_omega_at: float | None = None

    def to_csv(self, path) -> None:
        d = self.x.shape[1]
        xcols = ",".join(f"x{j + 1}" for j in range(d))
        xicols = ",".join(f"xi{j + 1}" for j in range(d))
        with open(path, "w") as fh:
            fh.write(f"s,t,{xcols},tau,{xicols},ptilde\n")
            for i in range(self.s.size):
                parts = [f"{self.s[i]:.17g}", f"{self.t[i]:.17g}"]
                parts += [f"{v:.17g}" for v in self.x[i]]
                parts.append(f"{self.tau:.17g}")
                parts += [f"{v:.17g}" for v in self.xi[i]]
                parts.append(f"{self.ptilde[i]:.17g}")
                fh.write(",".join(parts) + "\n")


def symbol(med: MediumFields, x, tau: float, xi) -> float:
    """Full principal symbol -rho tau^2 + xi.K xi."""
    x = np.asarray(x, float)
    xi = np.asarray(xi, float)
    return -med.rho_at(x) * tau * tau + float(xi @ med.kmat_at(x) @ xi)


def symbol_normalized(med: MediumFields, x, tau: float, xi) -> float:
    """Normalized symbol (-tau^2 + xi.(K/rho) xi) / 2."""
    x = np.asarray(x, float)
    xi = np.asarray(xi, float)
    return 0.5 * (-tau * tau + float(xi @ med.slowness_matrix(x) @ xi))


def make_null(med: MediumFields, x, direction, tau: float = -1.0) -> PhasePoint:
    """Null covector along a spatial direction: xi = lam d with p = 0."""
    x = np.atleast_1d(np.asarray(x, float))
    d = np.atleast_1d(np.asarray(direction, float))
    quad = float(d @ med.kmat_at(x) @ d)
    rho = med.rho_at(x)
    if quad <= 0.0 or rho <= 0.0 or tau == 0.0:
        raise DegenerateDirection("direction carries no wave speed")
    lam = abs(tau) * math.sqrt(rho / quad)
    return PhasePoint(t=0.0, x=x, tau=float(tau), xi=lam * d)


# ---------------------------------------------------------------------------
# flow
# ---------------------------------------------------------------------------

def _rhs_normalized(med: MediumFields, tau: float, x: np.ndarray,
                    xi: np.ndarray):
    xdot = med.slowness_matrix(x) @ xi
    gs = med.grad_slowness(x)
    xidot = -0.5 * np.einsum("i,kij,j->k", xi, gs, xi)
    return -tau, xdot, xidot


def _rhs_full(med: MediumFields, tau: float, x: np.ndarray, xi: np.ndarray):
    xdot = 2.0 * med.kmat_at(x) @ xi
    gr = med.grad_rho_at(x)
    gk = med.grad_kmat_at(x)
    xidot = tau * tau * gr - np.einsum("i,kij,j->k", xi, gk, xi)
    tdot = -2.0 * med.rho_at(x) * tau
    return tdot, xdot, xidot


def flow(med: MediumFields, start: PhasePoint, ds: float, n_steps: int,
         hamiltonian: str = "normalized", bounds: Box | None = None,
         omega: Callable[[np.ndarray], bool] | None = None) -> RayPath:
    """Integrate the bicharacteristic flow with fixed-step RK4.

    tau is a constant of both flows and is held exactly.  With bounds
    given, raises LeftDomain the first time the ray exits the box; with
    omega given, records the first time parameter at which the spatial
    point satisfies it.
    """
    if hamiltonian == "normalized":
        rhs = _rhs_normalized
    elif hamiltonian == "full":
        rhs = _rhs_full
    else:
        raise ValueError(f"unknown hamiltonian {hamiltonian!r}")
    if ds <= 0.0 or n_steps < 1:
        raise ValueError("need ds > 0 and n_steps >= 1")

    tau = float(start.tau)
    t = float(start.t)
    x = start.x.copy()
    xi = start.xi.copy()

    ss = np.empty(n_steps + 1)
    ts = np.empty(n_steps + 1)
    xs = np.empty((n_steps + 1, med.dim))
    xis = np.empty((n_steps + 1, med.dim))
    pts = np.empty(n_steps + 1)
    entered = None

    def record(i, s):
        nonlocal entered
        ss[i] = s
        ts[i] = t
        xs[i] = x
        xis[i] = xi
        pts[i] = symbol_normalized(med, x, tau, xi)
        if omega is not None and entered is None and omega(x):
            entered = t
        if bounds is not None and not bounds.contains(x):
            err = LeftDomain(f"ray left the box at s = {s:.6g}")
            err.entered_omega_at = entered
            raise err

    record(0, 0.0)
    for i in range(1, n_steps + 1):
        k1t, k1x, k1xi = rhs(med, tau, x, xi)
        k2t, k2x, k2xi = rhs(med, tau, x + 0.5 * ds * k1x, xi + 0.5 * ds * k1xi)
        k3t, k3x, k3xi = rhs(med, tau, x + 0.5 * ds * k2x, xi + 0.5 * ds * k2xi)
        k4t, k4x, k4xi = rhs(med, tau, x + ds * k3x, xi + ds * k3xi)
        t += ds / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t)
        x = x + ds / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        xi = xi + ds / 6.0 * (k1xi + 2.0 * k2xi + 2.0 * k3xi + k4xi)
        record(i, i * ds)
    return RayPath(ss, ts, xs, tau, xis, pts, entered)


# ---------------------------------------------------------------------------
# geodesic diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeodesicResidual:
    max_xi_res: float
    max_speed_res: float


def geodesic_residual(med: MediumFields, path: RayPath) -> GeodesicResidual:
    """Check the geodesic relations along a normalized-flow path.

    With G = (K/rho)^(-1) and xdot from centered differences:
    xi should equal G xdot, and xdot.G xdot should equal tau^2.
    """
    if path.s.size < 3:
        raise ValueError("path too short for centered differences")
    ds = path.s[1] - path.s[0]
    xdot = (path.x[2:] - path.x[:-2]) / (2.0 * ds)
    tau2 = path.tau * path.tau
    xi_res = 0.0
    speed_res = 0.0
    for i in range(xdot.shape[0]):
        xm = path.x[i + 1]
        G = np.linalg.inv(med.slowness_matrix(xm))
        gx = G @ xdot[i]
        xi_res = max(xi_res, float(np.max(np.abs(path.xi[i + 1] - gx))))
        speed_res = max(speed_res, abs(float(xdot[i] @ gx) - tau2))
    return GeodesicResidual(xi_res, speed_res)


def xi_dot_identity_residual(med: MediumFields, path: RayPath) -> float:
    """Residual of xi_dot_k = (1/2) xdot.(dG/dx_k) xdot along the path,
    using dG/dx_k = -G d(K/rho)/dx_k G and centered differences."""
    if path.s.size < 3:
        raise ValueError("path too short for centered differences")
    ds = path.s[1] - path.s[0]
    xdot = (path.x[2:] - path.x[:-2]) / (2.0 * ds)
    xidot = (path.xi[2:] - path.xi[:-2]) / (2.0 * ds)
    worst = 0.0
    for i in range(xdot.shape[0]):
        xm = path.x[i + 1]
        G = np.linalg.inv(med.slowness_matrix(xm))
        gs = med.grad_slowness(xm)
        for k in range(med.dim):
            dGk = -G @ gs[k] @ G
            rhs = 0.5 * float(xdot[i] @ dGk @ xdot[i])
            worst = max(worst, abs(float(xidot[i][k]) - rhs))
    return worst


# ---------------------------------------------------------------------------
# ray bundles and entry times
# ---------------------------------------------------------------------------

def sample_bundle(domain: Box, n_pos: int, n_dir: int = 8) -> list[tuple[np.ndarray, np.ndarray]]:
    """Regular interior bundle: per-axis positions (i+1)/(n_pos+1) across
    the box, with +-1 directions in 1D and n_dir equal angles in 2D."""
    if n_pos < 1:
        raise ValueError("need n_pos >= 1")
    lo = np.asarray(domain.lo)
    hi = np.asarray(domain.hi)
    fracs = [(i + 1.0) / (n_pos + 1.0) for i in range(n_pos)]
    bundle = []
    if domain.dim == 1:
        for f in fracs:
            x0 = lo + f * (hi - lo)
            bundle.append((x0.copy(), np.array([1.0])))
            bundle.append((x0.copy(), np.array([-1.0])))
    else:
        if n_dir < 1:
            raise ValueError("need n_dir >= 1")
        angles = [2.0 * math.pi * j / n_dir for j in range(n_dir)]
        for fx in fracs:
            for fy in fracs:
                x0 = lo + np.array([fx, fy]) * (hi - lo)
                for th in angles:
                    bundle.append((x0.copy(), np.array([math.cos(th), math.sin(th)])))
    return bundle


@dataclass
class GccResult:
    """Worst-case time for the ray bundle to reach the damping region."""

    T0: float
    worst_ray: int
    entry_times: np.ndarray
    bundle: list

    def to_csv(self, path) -> None:
        dim = self.bundle[0][0].size
        with open(path, "w") as fh:
            if dim == 1:
                fh.write("ray_id,x0,dir,entry_time\n")
                for i, (x0, d) in enumerate(self.bundle):
                    fh.write(f"{i},{x0[0]:.17g},{d[0]:.17g},"
                             f"{self.entry_times[i]:.17g}\n")
            else:
                fh.write("ray_id,x01,x02,dir1,dir2,entry_time\n")
                for i, (x0, d) in enumerate(self.bundle):
                    fh.write(f"{i},{x0[0]:.17g},{x0[1]:.17g},"
                             f"{d[0]:.17g},{d[1]:.17g},"
                             f"{self.entry_times[i]:.17g}\n")


def _fold(y: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Reflect free motion into [lo, hi] (billiard triangle wave)."""
    span = hi - lo
    z = np.mod(y - lo, 2.0 * span)
    return lo + np.minimum(z, 2.0 * span - z)


def gcc_entry_time(med: MediumFields, domain: Box,
                   omega: Callable[[np.ndarray], np.ndarray],
                   bundle: Sequence[tuple[np.ndarray, np.ndarray]],
                   t_max: float, dt: float = 1e-3) -> GccResult:
    """First time each bundle ray meets omega; T0 is the worst case.

    omega takes positions of shape (..., d) and returns booleans.  In a
    constant medium rays are straight lines reflecting off the box walls,
    marched in closed form for the whole bundle at once.  In a variable
    medium each ray follows the normalized flow and is scored until it
    leaves the box; rays that never meet omega get entry time inf.
    """
    if not bundle:
        raise ValueError("empty ray bundle")
    nt = int(round(t_max / dt))
    times = np.arange(nt + 1) * dt
    n_rays = len(bundle)
    entry = np.full(n_rays, math.inf)

    if med.is_constant:
        # velocity of the normalized flow at tau = -1, per ray
        x0 = np.stack([b[0] for b in bundle])
        vel = np.empty_like(x0)
        for i, (xx, dd) in enumerate(bundle):
            pp = make_null(med, xx, dd)
            vel[i] = med.slowness_matrix(xx) @ pp.xi
        # (n_rays, nt+1, d) folded positions
        free = x0[:, None, :] + vel[:, None, :] * times[None, :, None]
        pos = np.empty_like(free)
        for k in range(domain.dim):
            pos[:, :, k] = _fold(free[:, :, k], domain.lo[k], domain.hi[k])
        hits = omega(pos)
        for i in range(n_rays):
            idx = np.flatnonzero(hits[i])
            if idx.size:
                entry[i] = times[idx[0]]
    else:
        for i, (xx, dd) in enumerate(bundle):
            pp = make_null(med, xx, dd)
            try:
                path = flow(med, pp, dt, nt, bounds=domain,
                            omega=lambda x: bool(omega(np.asarray(x)[None, :])[0]))
            except LeftDomain as err:
                if err.entered_omega_at is not None:
                    entry[i] = err.entered_omega_at
                continue
            if path.entered_omega_at is not None:
                entry[i] = path.entered_omega_at

    finite = np.isfinite(entry)
    if not np.any(finite):
        worst = 0
        t0 = math.inf
    else:
        # a ray that never enters omega dominates every finite entry
        if np.all(finite):
            worst = int(np.argmax(entry))
            t0 = float(entry[worst])
        else:
            worst = int(np.flatnonzero(~finite)[0])
            t0 = math.inf
    return GccResult(T0=t0, worst_ray=worst, entry_times=entry, bundle=list(bundle))
