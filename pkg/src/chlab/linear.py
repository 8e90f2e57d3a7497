"""Quadratic forms and Dirichlet eigenproblems around the layered profiles.

All problems live on an interval with f = 0 at both ends and are discretized
by finite differences on the nodes x_i = x_0 + i h, i = 0..n.  Only the
interior values f_1..f_{n-1} are unknowns.  Each form becomes a sparse
symmetric matrix and the minimal Rayleigh quotient is the lowest eigenvalue
of the pencil (A, B), found by shifted inverse iteration.  A linear
constraint c.f = 0 is handled by deflation: every solve is followed by the
projection that keeps the iterate in the constrained subspace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import minimize_scalar
from scipy.sparse.linalg import splu

from .diagnostics import CheckResult
from .errors import NumericalFailure, PreconditionError
from .manifold import interval_profile, kink
from .potential import Potential


@dataclass
class DirichletProblem:
    """Interval (x0, x0 + length) with ``n_fd`` cells and a background profile."""

    length: float
    n_fd: int
    background: np.ndarray
    potential: Potential
    weight: str = "h1"
    x0: float = 0.0

    def __post_init__(self):
        if self.n_fd < 200:
            raise PreconditionError(f"n_fd must be at least 200, got {self.n_fd}")
        self.background = np.asarray(self.background, dtype=float)
        if self.background.shape != (self.n_fd + 1,):
            raise PreconditionError("background needs n_fd + 1 node values")

    @property
    def h(self) -> float:
        return self.length / self.n_fd

    @property
    def nodes(self) -> np.ndarray:
        return self.x0 + self.h * np.arange(self.n_fd + 1)

    @property
    def interior(self) -> np.ndarray:
        return self.nodes[1:-1]

    @property
    def curvature(self) -> np.ndarray:
        """G''(background) at the interior nodes."""
        return self.potential.g2(self.background[1:-1])


@dataclass
class FormReport:
    """Minimal Rayleigh quotient with its minimizer and a convergence check."""

    minimum: float
    minimizer: np.ndarray
    order_estimate: float
    length: float
    n_fd: int
    resolutions: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "L": self.length,
            "n_fd": self.n_fd,
            "minimum": self.minimum,
            "order_estimate": self.order_estimate,
        }


# ---------------------------------------------------------------------------
# sparse building blocks on the interior nodes


def _second_difference(m: int, h: float) -> sparse.csr_matrix:
    """(f_{i-1} - 2 f_i + f_{i+1}) / h^2 with zero end values."""
    return sparse.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(m, m), format="csr") / h ** 2


def _stiffness(m: int, h: float) -> sparse.csr_matrix:
    """Matrix of sum (f_{i+1} - f_i)^2 / h over all cells, ends included."""
    return sparse.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(m, m), format="csr") / h


def _inner_difference(m: int, h: float) -> sparse.csr_matrix:
    """(g_{i+1} - g_i) / h between neighbouring interior nodes."""
    return sparse.diags([-1.0, 1.0], [0, 1], shape=(m - 1, m), format="csr") / h


def _energy_pencil(prob: DirichletProblem):
    m, h = prob.n_fd - 1, prob.h
    K = _stiffness(m, h)
    A = K + sparse.diags(h * prob.curvature)
    B = K + h * sparse.identity(m)
    return A.tocsc(), B.tocsc()


def _second_difference_all(m: int, h: float) -> sparse.csr_matrix:
    """f_xx at all nodes 0..n: centred inside, one-sided second order at the ends."""
    n = m + 1
    D = sparse.lil_matrix((n + 1, m))
    D[1:n, :] = _second_difference(m, h) * h ** 2
    # 2 f_0 - 5 f_1 + 4 f_2 - f_3 with f_0 = 0, mirrored at the right end
    D[0, 0:3] = [-5.0, 4.0, -1.0]
    D[n, m - 3:m] = [-1.0, 4.0, -5.0]
    return D.tocsr() / h ** 2


def _dissipation_pencil(prob: DirichletProblem):
    m, h = prob.n_fd - 1, prob.h
    n = prob.n_fd
    D2 = _second_difference_all(m, h)
    Dc = sparse.diags([-1.0, 1.0], [0, 1], shape=(n, n + 1), format="csr") / h
    q = prob.potential.g2(prob.background)
    pick = sparse.vstack([sparse.csr_matrix((1, m)), sparse.identity(m), sparse.csr_matrix((1, m))])
    op = Dc @ (D2 - sparse.diags(q) @ pick)
    num = h * (op.T @ op)
    trap = np.full(n + 1, h)
    trap[[0, -1]] *= 0.5
    hardy = sparse.diags(h / (1.0 + prob.interior ** 2))
    d3 = Dc @ D2
    den = hardy + _stiffness(m, h) + D2.T @ sparse.diags(trap) @ D2 + h * (d3.T @ d3)
    mass = h * sparse.identity(m)
    return num.tocsc(), den.tocsc(), mass.tocsc()


# ---------------------------------------------------------------------------
# inverse iteration


def lowest_eigenpair(A, B, shift: float, constraint=None, tol: float = 1e-10,
                     maxiter: int = 5000, start=None, floor: float = 1e-5):
    """Lowest eigenpair of the symmetric pencil (A, B) with B positive definite.

    ``shift`` must lie below the wanted eigenvalue.  With ``constraint`` the
    problem is restricted to {f : constraint . f = 0}.  Returns (lambda, f)
    with f normalized so that f.B.f = 1.  Iteration stops when the residual
    relative to (A - shift B) f drops below ``tol``, or when it stagnates
    below ``floor`` for 20 steps.
    """
    m = A.shape[0]
    lu = splu((A - shift * B).tocsc())
    c = None
    if constraint is not None:
        c = np.asarray(constraint, dtype=float)
        z = lu.solve(c)
        czz = float(c @ z)
        cc = float(c @ c)

    def solve(r):
        y = lu.solve(r)
        if c is not None:
            y = y - z * (float(c @ y) / czz)
        return y

    if start is None:
        s = np.linspace(0.0, 1.0, m + 2)[1:-1]
        start = np.sin(np.pi * s) + 0.25 * np.sin(2 * np.pi * s) + 0.1 * np.sin(3 * np.pi * s)
    x = np.asarray(start, dtype=float).copy()
    if c is not None:
        x = x - c * (float(c @ x) / cc)
    lam = np.nan
    best, idle = np.inf, 0
    for _ in range(maxiter):
        y = solve(B @ x)
        nrm = math.sqrt(float(y @ (B @ y)))
        if not nrm > 0 or not np.isfinite(nrm):
            raise NumericalFailure("inverse iteration produced a degenerate iterate")
        x = y / nrm
        Ax, Bx = A @ x, B @ x
        lam = float(x @ Ax)
        r = Ax - lam * Bx
        if c is not None:
            r = r - c * (float(c @ r) / cc)
        scale = np.linalg.norm(Ax - shift * Bx)
        rel = np.linalg.norm(r) / scale
        if rel <= tol:
            return lam, x
        # accept a roundoff floor once the residual stops improving
        if rel < 0.5 * best:
            best, idle = rel, 0
        else:
            idle += 1
        if idle >= 20 and best <= floor:
            return lam, x
    raise NumericalFailure(f"inverse iteration did not converge in {maxiter} steps (lambda ~ {lam:.3e})")


def _with_ends(f: np.ndarray) -> np.ndarray:
    return np.concatenate(([0.0], f, [0.0]))


def _order(values: list[float]) -> float:
    """Observed order from three successive doublings."""
    if len(values) < 3:
        return float("nan")
    d1, d2 = abs(values[0] - values[1]), abs(values[1] - values[2])
    if d1 == 0 or d2 == 0:
        return float("nan")
    return math.log2(d1 / d2)


def _ladder(n_fd: int, richardson: bool) -> list[int]:
    return [n_fd, 2 * n_fd, 4 * n_fd] if richardson else [n_fd]


# ---------------------------------------------------------------------------
# backgrounds


def optimal_background(L: float, p: Potential, n_fd: int) -> np.ndarray:
    """Positive optimal profile v_L on [0, L] sampled at the FD nodes."""
    prof = interval_profile(L, p)
    return prof.value(L / n_fd * np.arange(n_fd + 1))


def _background(L, p, n_fd, background):
    if background is None:
        return optimal_background(L, p, n_fd)
    if callable(background):
        return np.asarray(background(L / n_fd * np.arange(n_fd + 1)), dtype=float)
    return np.full(n_fd + 1, float(background))


def discrete_kink(window: float, p: Potential, n_fd: int) -> np.ndarray:
    """Kink on (-window, window) solving the FD equation -D2 v + G'(v) = 0.

    The odd solution is found by Newton iteration on (0, window) with v(0) = 0
    and the continuum end value, then reflected.  The FD Hessian of the full
    problem then carries the translation mode up to lattice effects.
    """
    if n_fd % 2:
        raise PreconditionError("n_fd must be even")
    k = kink(p)
    h = 2.0 * window / n_fd
    half = n_fd // 2
    xr = h * np.arange(half + 1)
    v = np.asarray(k(xr), dtype=float)
    v[0] = 0.0
    m = half - 1
    D2 = _second_difference(m, h).tocsc()
    ends = np.zeros(m)
    ends[-1] = v[-1] / h ** 2
    for _ in range(50):
        vi = v[1:-1]
        res = -(D2 @ vi + ends) + p.g1(vi)
        J = (-D2 + sparse.diags(p.g2(vi))).tocsc()
        step = splu(J).solve(res)
        v[1:-1] = vi - step
        if np.max(np.abs(step)) <= 1e-14:
            break
    else:
        raise NumericalFailure("discrete kink Newton iteration did not converge")
    return np.concatenate((-v[:0:-1], v))


# ---------------------------------------------------------------------------
# public forms


def energy_form_gap(L: float, p: Potential, n_fd: int = 400, background=None,
                    richardson: bool = True) -> FormReport:
    """Minimize (int f_x^2 + G''(v) f^2) / (int f^2 + f_x^2) with f(0) = f(L) = 0.

    ``background`` defaults to the optimal profile v_L; a number gives a
    constant background and a callable is sampled at the nodes.
    """
    if background is None and not L > p.bifurcation_length:
        raise PreconditionError(f"L = {L} is not above the bifurcation length")
    vals, first = [], None
    for n in _ladder(n_fd, richardson):
        prob = DirichletProblem(L, n, _background(L, p, n, background), p)
        A, B = _energy_pencil(prob)
        shift = min(0.0, float(np.min(prob.curvature))) - 0.5
        lam, f = lowest_eigenpair(A, B, shift)
        vals.append(lam)
        if first is None:
            first = _with_ends(f)
    return FormReport(vals[0], first, _order(vals), float(L), n_fd,
                      dict(zip(_ladder(n_fd, richardson), vals)))


def orthogonal_gap(window: float, p: Potential, n_fd: int | None = None,
                   richardson: bool = True) -> FormReport:
    """Energy form around the kink on (-window, window), Dirichlet ends.

    ``minimum`` is the minimum over f orthogonal to v_inf_x in L^2, and
    ``extras["unconstrained"]`` the plain minimum.  The default resolution is
    h = 0.05.
    """
    if not window > 0:
        raise PreconditionError("window must be positive")
    if n_fd is None:
        n_fd = max(200, int(round(2 * window / 0.05)))
    cons, free, first = [], [], None
    for n in _ladder(n_fd, richardson):
        v = discrete_kink(window, p, n)
        prob = DirichletProblem(2 * window, n, v, p, x0=-window)
        A, B = _energy_pencil(prob)
        shift = min(0.0, float(np.min(prob.curvature))) - 0.5
        slope = (v[2:] - v[:-2]) / (2 * prob.h)
        lam_c, f = lowest_eigenpair(A, B, shift, constraint=prob.h * slope)
        lam_u, _ = lowest_eigenpair(A, B, shift)
        cons.append(lam_c)
        free.append(lam_u)
        if first is None:
            first = _with_ends(f)
    report = FormReport(cons[0], first, _order(cons), 2.0 * window, n_fd,
                        dict(zip(_ladder(n_fd, richardson), cons)))
    report.extras["unconstrained"] = free[0]
    report.extras["unconstrained_resolutions"] = free
    return report


def translation_mode_value(window: float, p: Potential, n_fd: int | None = None) -> float:
    """Energy-form quotient of the sampled v_inf_x on the window."""
    if n_fd is None:
        n_fd = max(200, int(round(2 * window / 0.05)))
    v = discrete_kink(window, p, n_fd)
    prob = DirichletProblem(2 * window, n_fd, v, p, x0=-window)
    A, B = _energy_pencil(prob)
    f = (v[2:] - v[:-2]) / (2 * prob.h)
    return float(f @ (A @ f)) / float(f @ (B @ f))


def dissipation_form_gap(L: float, p: Potential, n_fd: int = 400, background=None,
                         c1: float = 0.25, richardson: bool = True) -> FormReport:
    """Minimize int ((f_xx - G''(v) f)_x)^2 over the Hardy-weighted H^3 form.

    Three values are reported.  ``extras["raw"]`` is the plain quotient,
    which vanishes: f_xx - G''(v) f = const has a solution with f(0) = f(L)
    = 0.  ``extras["deflated"]`` is the minimum orthogonal (in the denominator
    inner product) to that kernel.  ``minimum`` adds the L^2 bound: the
    minimum of the quotient over f with int f^2 <= c1 * denominator, computed
    as max over mu >= 0 of lambda_min(Num + mu (M - c1 Den), Den).
    """
    if not (L >= 10 and L > p.bifurcation_length):
        raise PreconditionError(f"L = {L} must be at least 10 and above the bifurcation length")
    rungs = _ladder(n_fd, richardson)
    cons, raws, defl, first, mus = [], [], [], None, []
    for n in rungs:
        prob = DirichletProblem(L, n, _background(L, p, n, background), p, weight="dissipation")
        num, den, mass = _dissipation_pencil(prob)
        # the pencil tends to 1 at high frequency, so an absolute shift is safe
        shift = -1e-3
        raw, f0 = lowest_eigenpair(num, den, shift, maxiter=20000, floor=1e-2)
        lam2, _ = lowest_eigenpair(num, den, shift, constraint=den @ f0, maxiter=20000, floor=1e-2)

        def neg_dual(mu):
            lam, _ = lowest_eigenpair(num + mu * mass, den, shift, maxiter=20000, floor=1e-2)
            return -(lam - mu * c1)

        # the dual is concave; bracket its maximiser
        hi = 1.0
        while -neg_dual(2 * hi) > -neg_dual(hi) and hi < 1e6:
            hi *= 2
        opt = minimize_scalar(neg_dual, bounds=(0.0, 2 * hi), method="bounded",
                              options={"xatol": 1e-10 * hi})
        mu = float(opt.x)
        lam_c, f = lowest_eigenpair(num + mu * mass, den, shift, maxiter=20000, floor=1e-2)
        cons.append(lam_c - mu * c1)
        raws.append(raw)
        defl.append(lam2)
        mus.append(mu)
        if first is None:
            first = _with_ends(f)
    report = FormReport(cons[0], first, _order(cons), float(L), n_fd, dict(zip(rungs, cons)))
    report.extras.update(raw=raws[0], deflated=defl[0], multiplier=mus[0], c1=c1,
                         deflated_order=_order(defl))
    return report


# ---------------------------------------------------------------------------
# checks


def fd_weights(order: int, half_width: int) -> np.ndarray:
    """Central finite-difference weights for d^order/dx^order on 2 m + 1 points (h = 1)."""
    k = np.arange(-half_width, half_width + 1, dtype=float)
    V = np.vander(k, increasing=True).T
    rhs = np.zeros(len(k))
    rhs[order] = math.factorial(order)
    return np.linalg.solve(V, rhs)


def _apply_stencil(f: np.ndarray, w: np.ndarray, h: float, order: int) -> np.ndarray:
    m = (len(w) - 1) // 2
    out = np.zeros(len(f) - 2 * m)
    for j, wj in enumerate(w):
        out += wj * f[j: len(f) - 2 * m + j]
    return out / h ** order


def apply_dissipation_operator(f: np.ndarray, curvature: np.ndarray, h: float) -> np.ndarray:
    """(-f_xx + G'' f)_x by sixth-order central differences, on interior nodes.

    The result is aligned with nodes 4 .. len(f) - 5.
    """
    d3 = _apply_stencil(f, fd_weights(3, 4), h, 3)
    d1 = _apply_stencil(curvature * f, fd_weights(1, 3), h, 1)[1:-1]
    return -d3 + d1


def kernel_check(p: Potential, window: float = 20.0, n_fd: int = 2000,
                 tol: float = 1e-6, perturbation: float = 0.1) -> CheckResult:
    """Apply (-d_xx + G''(v_inf)) d_x to v_inf_x and to a perturbed function.

    Passes when the residual for v_inf_x is at most ``tol`` while the one for
    v_inf_x + perturbation * sin(x) exceeds 1e-2.  ``value`` is the former.
    """
    if window < 20:
        raise PreconditionError("window must be at least 20")
    k = kink(p)
    h = 2.0 * window / n_fd
    x = -window + h * np.arange(n_fd + 1)
    curv = p.g2(k(x))
    f = np.asarray(k.derivative(x), dtype=float)
    res = float(np.max(np.abs(apply_dissipation_operator(f, curv, h))))
    bumped = float(np.max(np.abs(apply_dissipation_operator(f + perturbation * np.sin(x), curv, h))))
    return CheckResult("kernel", bool(res <= tol and bumped > 1e-2), res, tol)


def kink_decay_ratio(p: Potential, lo: float = 5.0, hi: float = 12.0, samples: int = 200):
    """Range of v_inf_x(x) e^{C_G |x|} over lo <= |x| <= hi."""
    k = kink(p)
    x = np.concatenate((np.linspace(lo, hi, samples), -np.linspace(lo, hi, samples)))
    r = np.asarray(k.derivative(x)) * np.exp(p.c_g * np.abs(x))
    return float(np.min(r)), float(np.max(r))


def hardy_family_check(L: float = 20.0, members: int = 200, modes: int = 40,
                       seed: int = 0, bound: float = 4.0, n_quad: int = 4000) -> CheckResult:
    """Max of int f^2/(1+x^2) / int f_x^2 over random sine series on (0, L)."""
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, L, n_quad + 1)
    j = np.arange(1, modes + 1)
    S = np.sin(np.outer(x, j) * np.pi / L)
    C = np.cos(np.outer(x, j) * np.pi / L) * (j * np.pi / L)
    wq = np.full(n_quad + 1, L / n_quad)
    wq[[0, -1]] *= 0.5
    worst = 0.0
    for _ in range(members):
        a = rng.standard_normal(modes) / j ** rng.uniform(0.5, 2.0)
        f, fx = S @ a, C @ a
        ratio = float(wq @ (f * f / (1.0 + x * x))) / float(wq @ (fx * fx))
        worst = max(worst, ratio)
    return CheckResult("hardy", bool(worst <= bound), worst, bound)
