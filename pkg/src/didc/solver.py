"""Contact-force distribution QP.

Cost (per stance):  (J_ab^T f - tau_b)^T S1 (J_ab^T f - tau_b) + f^T W f + (f - f_prev)^T V (f - f_prev)
rewritten as f^T Q f + P f + R and solved either with the projected Newton scheme
``gpgd_solve`` (exact second-order cone) or with ``pyramid_qp_solve``, a dense
primal active-set method over a faceted pyramid approximation of the cone.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve, null_space


class SolverError(RuntimeError):
    """Raised when the active-set method exceeds its pivot budget or the problem is malformed."""


def _as_matrix(x, n: int) -> np.ndarray:
    """Scalar, diagonal vector or full matrix -> (n, n) matrix."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(n)
    if a.ndim == 1:
        if a.shape != (n,):
            raise ValueError(f"diagonal weight of length {a.shape[0]} where {n} was expected")
        return np.diag(a)
    if a.shape != (n, n):
        raise ValueError(f"weight matrix of shape {a.shape} where ({n}, {n}) was expected")
    return a


def _per_contact(x, n_c: int, name: str) -> np.ndarray:
    a = np.broadcast_to(np.asarray(x, dtype=float), (n_c,)).copy() if np.ndim(x) == 0 else np.asarray(x, float)
    if a.shape != (n_c,):
        raise ValueError(f"{name} needs one value per contact ({n_c}), got shape {a.shape}")
    return a


@dataclass
class ConeQP:
    """min f^T Q f + P f + R  s.t. per contact ||f_xy|| <= mu f_z, f_min <= f_z <= f_max."""

    Q: np.ndarray
    P: np.ndarray
    R: float
    mu: np.ndarray
    f_min: np.ndarray
    f_max: np.ndarray
    f_prev: np.ndarray
    J_ab: np.ndarray | None = None  # kept for residual reporting
    tau_b: np.ndarray | None = None

    def __post_init__(self) -> None:
        n = self.Q.shape[0]
        if n % 3 or self.Q.shape != (n, n) or self.P.shape != (n,):
            raise ValueError(f"inconsistent QP sizes Q{self.Q.shape} P{self.P.shape}")
        n_c = n // 3
        self.mu = _per_contact(self.mu, n_c, "mu")
        self.f_min = _per_contact(self.f_min, n_c, "f_min")
        self.f_max = _per_contact(self.f_max, n_c, "f_max")
        if np.any(self.mu <= 0.0):
            raise ValueError("friction coefficient must be positive")
        if np.any(self.f_min < 0.0) or np.any(self.f_min > self.f_max):
            raise ValueError("normal force bounds must satisfy 0 <= f_min <= f_max")

    @property
    def n_c(self) -> int:
        return self.Q.shape[0] // 3

    def objective(self, f: np.ndarray) -> float:
        return float(f @ self.Q @ f + self.P @ f + self.R)


@dataclass
class SolveReport:
    f_star: np.ndarray
    iterations: int
    converged: bool
    residual: float  # ||J_ab^T f - tau_b||
    violation: float  # ||delta_g|| of the matching violation measure
    solve_time: float
    objective: float = float("nan")
    multipliers: np.ndarray | None = field(default=None, repr=False)


def build_qp(
    J_ab: np.ndarray,
    tau_b: np.ndarray,
    S1,
    W,
    V,
    f_prev: np.ndarray | None = None,
    mu=0.5,
    f_min=0.0,
    f_max=500.0,
) -> ConeQP:
    """Expand the three-term cost into standard quadratic form.

    ``J_ab`` is the (3 n_c, 6) base block of the contact Jacobian, so J_ab^T f is
    the wrench the contact forces exert on the base.
    """
    J_ab = np.asarray(J_ab, dtype=float)
    tau_b = np.asarray(tau_b, dtype=float)
    if J_ab.ndim != 2 or J_ab.shape[1] != 6 or J_ab.shape[0] % 3:
        raise ValueError(f"J_ab must be (3 n_c, 6), got {J_ab.shape}")
    if tau_b.shape != (6,):
        raise ValueError(f"tau_b must have 6 entries, got {tau_b.shape}")
    n = J_ab.shape[0]
    S = _as_matrix(S1, 6)
    Wm = _as_matrix(W, n)
    Vm = _as_matrix(V, n)
    if np.any(np.diag(S) <= 0) or np.any(np.diag(Wm) < 0) or np.any(np.diag(Vm) < 0):
        raise ValueError("S1 must be positive and W, V non-negative")
    fp = np.zeros(n) if f_prev is None else np.asarray(f_prev, dtype=float)
    if fp.shape != (n,):
        raise ValueError(f"f_prev must have {n} entries, got {fp.shape}")
    Q = J_ab @ S @ J_ab.T + Wm + Vm
    Q = 0.5 * (Q + Q.T)
    P = -2.0 * (tau_b @ S @ J_ab.T + fp @ Vm)
    R = float(tau_b @ S @ tau_b + fp @ Vm @ fp)
    return ConeQP(Q, P, R, mu, f_min, f_max, fp, J_ab, tau_b)


def direct_cost(J_ab, f, tau_b, S1, W, V, f_prev) -> float:
    """The three weighted terms evaluated as written, for cross-checking ``build_qp``."""
    n = len(f)
    e = J_ab.T @ f - tau_b
    d = f - f_prev
    return float(e @ _as_matrix(S1, 6) @ e + f @ _as_matrix(W, n) @ f + d @ _as_matrix(V, n) @ d)


# ---------------------------------------------------------------- projection


def project_cone(f: np.ndarray, mu: float, f_min: float, f_max: float) -> np.ndarray:
    """Euclidean projection of one contact force onto {||f_xy|| <= mu f_z, f_min <= f_z <= f_max}.

    Three branches: interior (after clamping f_z), dual cone (projects to the apex,
    lifted to f_min), and the cone surface with the surface point's height clamped.
    """
    fx, fy, fz = float(f[0]), float(f[1]), float(f[2])
    ft = np.hypot(fx, fy)
    fz_c = min(max(fz, f_min), f_max)
    if ft <= mu * fz_c:
        return np.array([fx, fy, fz_c])
    if ft <= -fz / mu:
        zp = 0.0
    else:
        zp = (mu * ft + fz) / (mu * mu + 1.0)
    zp = min(max(zp, f_min), f_max)
    if ft == 0.0:  # unreachable for mu > 0; kept as a guard
        return np.array([0.0, 0.0, zp])
    s = mu * zp / ft
    # nudge the scale down by ulps so the result passes the interior test bit-exactly
    # (makes the projection idempotent in floating point)
    while np.hypot(s * fx, s * fy) > mu * zp:
        s = np.nextafter(s, 0.0)
    return np.array([s * fx, s * fy, zp])


def projection_branch(f: np.ndarray, mu: float, f_min: float, f_max: float) -> str:
    """Which of the three projection branches ``f`` falls in: interior, dual or surface."""
    ft = np.hypot(f[0], f[1])
    if ft <= mu * min(max(f[2], f_min), f_max):
        return "interior"
    if ft <= -f[2] / mu:
        return "dual"
    return "surface"


def project_all(qp: ConeQP, f: np.ndarray) -> np.ndarray:
    out = np.empty_like(f)
    for i in range(qp.n_c):
        out[3 * i: 3 * i + 3] = project_cone(f[3 * i: 3 * i + 3], qp.mu[i], qp.f_min[i], qp.f_max[i])
    return out


# ---------------------------------------------------------------- metrics


def cone_violation(f: np.ndarray, mu) -> np.ndarray:
    """Per-contact min{mu f_z - ||f_xy||, 0}."""
    F = np.asarray(f, dtype=float).reshape(-1, 3)
    mu = np.broadcast_to(np.asarray(mu, float), (F.shape[0],))
    return np.minimum(mu * F[:, 2] - np.hypot(F[:, 0], F[:, 1]), 0.0)


def pyramid_violation(f: np.ndarray, mu) -> np.ndarray:
    """Per-contact min over the four linear friction inequalities and 0."""
    F = np.asarray(f, dtype=float).reshape(-1, 3)
    mu = np.broadcast_to(np.asarray(mu, float), (F.shape[0],))
    fx, fy, fz = F[:, 0], F[:, 1], F[:, 2]
    terms = np.stack([mu * fz - fx, mu * fz + fx, mu * fz - fy, mu * fz + fy, np.zeros_like(fz)])
    return terms.min(axis=0)


def wrench_residual(J_ab: np.ndarray, f: np.ndarray, tau_b: np.ndarray) -> float:
    if J_ab.shape[0] == 0:
        return float(np.linalg.norm(tau_b))
    return float(np.linalg.norm(J_ab.T @ f - tau_b))


def _residual(qp: ConeQP, f: np.ndarray) -> float:
    if qp.J_ab is None or qp.tau_b is None:
        return float("nan")
    return wrench_residual(qp.J_ab, f, qp.tau_b)


# ---------------------------------------------------------------- GPGD


def gpgd_solve(
    qp: ConeQP, f_init: np.ndarray | None = None, max_iters: int = 100, tol: float = 1e-2
) -> SolveReport:
    """Full Newton step on the unconstrained cost, then per-contact cone projection.

    The Hessian 2Q is factored once. Iterates are the projected points; the loop
    stops when a projected point moves less than ``tol`` from the previous iterate.
    """
    t0 = time.perf_counter()
    fn = qp.f_prev.copy() if f_init is None else np.asarray(f_init, dtype=float).copy()
    H = cho_factor(2.0 * qp.Q)  # raises LinAlgError for non-SPD Q
    fp = fn
    converged = False
    it = 0
    while it < max_iters:
        grad = 2.0 * qp.Q @ fn + qp.P
        step = fn - cho_solve(H, grad)
        fp = project_all(qp, step)
        it += 1
        if np.linalg.norm(fp - fn) < tol:
            converged = True
            break
        fn = fp
    dt = time.perf_counter() - t0
    return SolveReport(
        f_star=fp,
        iterations=it,
        converged=converged,
        residual=_residual(qp, fp),
        violation=float(np.linalg.norm(cone_violation(fp, qp.mu))),
        solve_time=dt,
        objective=qp.objective(fp),
    )


# ---------------------------------------------------------------- pyramid baseline


def pyramid_constraints(qp: ConeQP, facets: int = 4, inscribed: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """A f <= b for ``facets`` friction half-planes plus normal bounds per contact.

    Facet k is cos(t_k) f_x + sin(t_k) f_y <= mu' f_z with t_k = 2 pi k / facets. With
    mu' = mu the planes touch the cone along those directions (the pyramid contains the
    cone); ``inscribed`` uses mu' = mu cos(pi / facets) so the pyramid lies inside it.
    """
    if facets < 4:
        raise ValueError("need at least 4 facets")
    n_c = qp.n_c
    th = 2.0 * np.pi * np.arange(facets) / facets
    c, s = np.cos(th), np.sin(th)
    c[np.abs(c) < 1e-15] = 0.0
    s[np.abs(s) < 1e-15] = 0.0
    rows_per = facets + 2
    A = np.zeros((rows_per * n_c, 3 * n_c))
    b = np.zeros(rows_per * n_c)
    for i in range(n_c):
        m = qp.mu[i] * (np.cos(np.pi / facets) if inscribed else 1.0)
        r0 = rows_per * i
        A[r0: r0 + facets, 3 * i] = c
        A[r0: r0 + facets, 3 * i + 1] = s
        A[r0: r0 + facets, 3 * i + 2] = -m
        A[r0 + facets, 3 * i + 2] = -1.0
        b[r0 + facets] = -qp.f_min[i]
        A[r0 + facets + 1, 3 * i + 2] = 1.0
        b[r0 + facets + 1] = qp.f_max[i]
    return A, b


def active_set_qp(
    H: np.ndarray,
    g: np.ndarray,
    A: np.ndarray,
    b: np.ndarray,
    x0: np.ndarray,
    max_pivots: int = 1000,
    tol: float = 1e-12,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Primal active-set method for min 1/2 x^T H x + g^T x s.t. A x <= b, from feasible x0.

    Bland's rule (lowest index) picks both the constraint to drop and, among ties,
    the blocking constraint, which rules out cycling on degenerate vertices.
    Returns (x, multipliers for all rows, pivots used).
    """
    n = H.shape[0]
    x = x0.copy()
    if np.any(A @ x - b > 1e-9):
        raise SolverError("starting point is infeasible")
    work: list[int] = []
    row_norms = np.linalg.norm(A, axis=1)
    for pivots in range(max_pivots):
        grad = H @ x + g
        gscale = max(1.0, np.abs(H @ x).max(), np.abs(g).max())
        # null-space step on the current face: better conditioned than the full KKT system
        Z = null_space(A[work]) if work else np.eye(n)
        gz = Z.T @ grad
        if Z.shape[1] == 0 or np.abs(gz).max() <= tol * gscale:
            lam = np.linalg.lstsq(A[work].T, -grad, rcond=None)[0] if work else np.zeros(0)
            lam_tol = tol * max(1.0, np.abs(lam).max()) if work else 0.0
            if not work or lam.min() >= -lam_tol:
                mult = np.zeros(A.shape[0])
                mult[work] = np.maximum(lam, 0.0)
                return x, mult, pivots
            work.remove(min(work[j] for j in range(len(work)) if lam[j] < -lam_tol))
            continue
        p = -Z @ np.linalg.solve(Z.T @ H @ Z, gz)
        Ap = A @ p
        # rows nearly parallel to the working set see only round-off in A p; ignore them
        floor = 1e-10 * np.linalg.norm(p) * row_norms
        cand = np.flatnonzero(Ap > floor)
        cand = cand[~np.isin(cand, work)]
        alpha = 1.0
        block = -1
        if cand.size:
            ratios = np.maximum((b[cand] - A[cand] @ x) / Ap[cand], 0.0)
            r_min = ratios.min()
            if r_min < 1.0:
                alpha = float(r_min)
                # lowest index among (numerically) tied blocking constraints
                block = int(cand[np.flatnonzero(ratios <= r_min + 1e-15)[0]])
        x = x + alpha * p
        if block >= 0:
            work.append(block)
    raise SolverError(f"active-set method exceeded {max_pivots} pivots")


def pyramid_qp_solve(
    qp: ConeQP, facets: int = 4, inscribed: bool = False, max_pivots: int = 1000
) -> SolveReport:
    """Same objective over the faceted pyramid, solved with ``active_set_qp``."""
    t0 = time.perf_counter()
    A, b = pyramid_constraints(qp, facets, inscribed)
    top = np.where(np.isfinite(qp.f_max), qp.f_max, qp.f_min + 1.0)
    x0 = np.zeros(3 * qp.n_c)
    x0[2::3] = 0.5 * (qp.f_min + top)
    x, mult, pivots = active_set_qp(2.0 * qp.Q, qp.P, A, b, x0, max_pivots)
    dt = time.perf_counter() - t0
    return SolveReport(
        f_star=x,
        iterations=pivots,
        converged=True,
        residual=_residual(qp, x),
        violation=float(np.linalg.norm(pyramid_violation(x, qp.mu))),
        solve_time=dt,
        objective=qp.objective(x),
        multipliers=mult,
    )


def kkt_residual(qp: ConeQP, report: SolveReport, facets: int = 4, inscribed: bool = False) -> float:
    """max of stationarity, primal feasibility and complementarity violations."""
    A, b = pyramid_constraints(qp, facets, inscribed)
    x, lam = report.f_star, report.multipliers
    stat = np.abs(2.0 * qp.Q @ x + qp.P + A.T @ lam).max()
    prim = max(0.0, float((A @ x - b).max()))
    comp = np.abs(lam * (A @ x - b)).max()
    return float(max(stat, prim, comp, max(0.0, -lam.min())))


def parse_method(method: str) -> tuple[str, int, bool]:
    """'gpgd', 'pyramid-N' or 'pyramid-N-inscribed' -> (kind, facets, inscribed)."""
    if method == "gpgd":
        return "gpgd", 0, False
    parts = method.split("-")
    if parts[0] == "pyramid" and len(parts) in (2, 3) and parts[1].isdigit():
        facets = int(parts[1])
        if facets >= 3 and (len(parts) == 2 or parts[2] == "inscribed"):
            return "pyramid", facets, len(parts) == 3
    raise ValueError(f"unknown solver {method!r}; use gpgd, pyramid-N or pyramid-N-inscribed")


def solve_qp(
    qp: ConeQP, method: str = "gpgd", f_init: np.ndarray | None = None, max_iters: int = 100, tol: float = 1e-2
) -> SolveReport:
    kind, facets, inscribed = parse_method(method)
    if qp.n_c == 0:
        tau = qp.tau_b if qp.tau_b is not None else np.zeros(6)
        return SolveReport(np.zeros(0), 0, True, float(np.linalg.norm(tau)), 0.0, 0.0, qp.R)
    if kind == "gpgd":
        return gpgd_solve(qp, f_init, max_iters, tol)
    return pyramid_qp_solve(qp, facets, inscribed)


# ---------------------------------------------------------------- benchmark instances

TROT_PAIRS = ((0, 3), (1, 2))
DEFAULT_S1 = (1.0, 1.0, 2.0, 20.0, 20.0, 5.0)
DEFAULT_W = 1e-2
DEFAULT_V = 1e-3


@dataclass
class QPInstance:
    """Serializable problem data; ``to_qp`` rebuilds the ConeQP.

    JSON schema: {"J_ab": [[6 floats] x 3n_c], "tau_b": [6], "S1": [6], "W": float,
    "V": float, "f_prev": [3n_c], "mu": float, "f_min": float, "f_max": float}
    """

    J_ab: np.ndarray
    tau_b: np.ndarray
    f_prev: np.ndarray
    S1: tuple = DEFAULT_S1
    W: float = DEFAULT_W
    V: float = DEFAULT_V
    mu: float = 0.5
    f_min: float = 0.0
    f_max: float = 500.0

    def to_qp(self) -> ConeQP:
        return build_qp(self.J_ab, self.tau_b, self.S1, self.W, self.V, self.f_prev, self.mu, self.f_min, self.f_max)

    def to_dict(self) -> dict:
        return {
            "J_ab": self.J_ab.tolist(),
            "tau_b": self.tau_b.tolist(),
            "S1": list(self.S1),
            "W": self.W,
            "V": self.V,
            "f_prev": self.f_prev.tolist(),
            "mu": self.mu,
            "f_min": self.f_min,
            "f_max": self.f_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QPInstance":
        return cls(
            J_ab=np.asarray(d["J_ab"], float),
            tau_b=np.asarray(d["tau_b"], float),
            f_prev=np.asarray(d["f_prev"], float),
            S1=tuple(d.get("S1", DEFAULT_S1)),
            W=float(d.get("W", DEFAULT_W)),
            V=float(d.get("V", DEFAULT_V)),
            mu=float(d.get("mu", 0.5)),
            f_min=float(d.get("f_min", 0.0)),
            f_max=float(d.get("f_max", 500.0)),
        )


def save_instances(path: str | Path, instances: list[QPInstance]) -> None:
    Path(path).write_text(json.dumps([i.to_dict() for i in instances], indent=1))


def load_instances(path: str | Path) -> list[QPInstance]:
    return [QPInstance.from_dict(d) for d in json.loads(Path(path).read_text())]


def random_instance(rng: np.random.Generator, n_c: int, mass: float = 15.0, mu: float = 0.5) -> QPInstance:
    """Stance-like instance: feet near a 0.39 x 0.28 m rectangle 0.3 m below the base,
    demanded wrench = weight support plus a random disturbance, warm start from an
    equal weight split.
    """
    if not 1 <= n_c <= 4:
        raise ValueError("n_c must be in 1..4")
    nominal = np.array([[0.19, 0.14, -0.3], [0.19, -0.14, -0.3], [-0.19, 0.14, -0.3], [-0.19, -0.14, -0.3]])
    if n_c == 2:
        legs = list(TROT_PAIRS[rng.integers(2)])
    else:
        legs = sorted(rng.choice(4, size=n_c, replace=False).tolist())
    feet = nominal[legs] + rng.normal(scale=[0.03, 0.02, 0.02], size=(n_c, 3))
    J = np.zeros((3 * n_c, 6))
    for i, d in enumerate(feet):
        J[3 * i: 3 * i + 3, :3] = np.eye(3)
        J[3 * i: 3 * i + 3, 3:] = np.array([[0, -d[2], d[1]], [d[2], 0, -d[0]], [-d[1], d[0], 0]]).T
    tau_b = np.array([0.0, 0.0, mass * 9.81, 0.0, 0.0, 0.0])
    tau_b += rng.normal(scale=[25.0, 25.0, 30.0, 4.0, 4.0, 2.0])
    f_prev = np.tile([0.0, 0.0, mass * 9.81 / n_c], n_c) + rng.normal(scale=5.0, size=3 * n_c)
    return QPInstance(J, tau_b, f_prev, mu=mu)
