"""Green kernel, the admissible-solution operator, and its oracles.

The solver evaluates the convolution of the Green kernel with the input by
two sweeps: a forward recursion for the range part and a backward solve on
the complementary subspace for the kernel part.  A sparse boundary value
problem over the same window acts as an independent oracle: recurrence rows
plus rank-reduced endpoint rows (range part of the solution pinned at the
left end, complementary part zeroed at the right end).  In exact arithmetic
both produce the window truncation of the same series, which is what makes
byte-level cross-checking meaningful.

Vectors here are raw doubles, so these routines want rates whose evolutions
stay representable; the extreme doubly exponential windows are served by the
log-domain routines (decay sweeps, counterexample) instead.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .errors import (
    AnalysisError,
    ConfigError,
    FitError,
    KernelSingularError,
    OracleMismatchError,
    SplittingDegenerateError,
)
from .dichotomy import (
    ProjectionFamily,
    fit_certificate,
    stable_slack_grid,
    unstable_slack_grid,
)
from .linalg import logsumexp, rowspace_basis, slope_intercept
from .rates import GrowthRate, NuSequence, WeightedNormSpec, make_abs_spec, norm
from .system import (
    LinearSystem,
    evolution_backward_embedded,
    kernel_step_matrix,
)

ORACLE_TOL = 1e-8
RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class BoundaryCondition:
    """Which solution space: half-line with prescribed initial subspace Z,
    or the full line."""

    kind: str
    z_basis: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("one_sided_Z", "two_sided"):
            raise ConfigError(f"unknown boundary kind {self.kind!r}")
        if self.kind == "one_sided_Z":
            z = np.asarray(self.z_basis, dtype=float)
            if z.ndim != 2:
                raise ConfigError("Z basis must be a d x k matrix")
            if z.shape[1] and not np.allclose(z.T @ z, np.eye(z.shape[1]), atol=1e-10):
                raise ConfigError("Z basis must have orthonormal columns")
            object.__setattr__(self, "z_basis", z)


def one_sided_boundary(proj: ProjectionFamily) -> BoundaryCondition:
    """Half-line boundary with Z = the complementary subspace at the left end."""
    return BoundaryCondition(kind="one_sided_Z", z_basis=proj.kernel_basis(proj.window[0]))


def two_sided_boundary() -> BoundaryCondition:
    return BoundaryCondition(kind="two_sided")


class GreenKernel:
    """Evaluation cache for the kernel: range part above the diagonal,
    negated complementary part below."""

    def __init__(self, sys: LinearSystem, proj: ProjectionFamily):
        if proj.window != sys.window:
            raise ConfigError("projection family window differs from system window")
        self.sys = sys
        self.proj = proj
        self._cache: dict[tuple[int, int], np.ndarray] = {}

    def at(self, m: int, n: int) -> np.ndarray:
        key = (m, n)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if m > n:
            # march with per-step re-projection: the range part equals
            # P_m A(m,n) P_n, and projecting as we go keeps rounding noise
            # from growing at the expansion rate
            val = self.sys.matrix(m - 1) @ self.at(m - 1, n)
            val = self.proj.matrix_at(m) @ val
        elif m == n:
            val = self.proj.matrix_at(n).copy()
        else:
            val = -evolution_backward_embedded(self.sys, self.proj, m, n)
        self._cache[key] = val
        return val


def green(kernel: GreenKernel, m: int, n: int) -> np.ndarray:
    return kernel.at(m, n)


def _raw_matrices(sys: LinearSystem) -> np.ndarray:
    return np.stack([sys.matrix(n) for n in range(sys.window[0], sys.window[1])])


def _green_convolve(sys: LinearSystem, proj: ProjectionFamily, y: np.ndarray) -> np.ndarray:
    """Window truncation of the kernel series, by forward/backward recursion."""
    w = sys.window[1] - sys.window[0]
    d = sys.dim
    raws = _raw_matrices(sys)
    p = proj.projections
    comp = np.eye(d)[None, :, :] - p

    s = np.empty((w + 1, d))
    s[0] = p[0] @ y[0]
    for i in range(w):
        # re-project each step: the iterate lives in the range family, and
        # projecting stops rounding noise from compounding at the expansion
        # rate over long windows
        s[i + 1] = p[i + 1] @ (raws[i] @ s[i] + y[i + 1])

    u = np.zeros((w + 1, d))
    d_u = d - proj.stable_rank
    if d_u > 0:
        kernels = [proj.kernel_basis(sys.window[0] + i) for i in range(w + 1)]
        for i in range(w - 1, -1, -1):
            rhs = kernels[i + 1].T @ (u[i + 1] + comp[i + 1] @ y[i + 1])
            e = kernel_step_matrix(sys, proj, sys.window[0] + i)
            sv = np.linalg.svd(e, compute_uv=False)
            if sv[0] == 0.0 or sv[-1] <= 1e-10 * sv[0]:
                raise KernelSingularError(
                    f"coefficient at n={sys.window[0] + i} is singular on the "
                    "complementary subspace"
                )
            z = np.linalg.solve(e, rhs) * math.exp(-float(sys.log_scales[i]))
            u[i] = kernels[i] @ z
    return s - u


@dataclass(frozen=True)
class SolveReport:
    """Solution plus the measured norms behind the admissibility bound."""

    window: tuple[int, int]
    beta: float
    variant: str
    boundary_kind: str
    solution: np.ndarray = field(repr=False)
    max_residual: float = 0.0
    input_norm_1beta: float = 0.0
    solution_norm_infbeta: float = 0.0
    bound_constant: float = 0.0
    left_constraint_norm: float = 0.0

    def to_json(self) -> dict:
        def f(x):
            return float(x) if math.isfinite(x) else None

        return {
            "window": list(self.window),
            "beta": self.beta,
            "variant": self.variant,
            "boundary_kind": self.boundary_kind,
            "max_residual": f(self.max_residual),
            "input_norm_1beta": f(self.input_norm_1beta),
            "solution_norm_infbeta": f(self.solution_norm_infbeta),
            "bound_constant": f(self.bound_constant),
            "left_constraint_norm": f(self.left_constraint_norm),
            "solution": [
                {"n": int(self.window[0] + i), "values": v.tolist()}
                for i, v in enumerate(self.solution)
            ],
        }


def _check_solve_inputs(sys, proj, y, rate, nu, boundary):
    if proj.window != sys.window:
        raise ConfigError("projection family window differs from system window")
    if rate.window != sys.window or nu.window != sys.window:
        raise ConfigError("rate/nu windows differ from system window")
    w = sys.window[1] - sys.window[0]
    y = np.asarray(y, dtype=float)
    if y.shape != (w + 1, sys.dim):
        raise ConfigError(
            f"input sequence must have shape {(w + 1, sys.dim)}, got {y.shape}"
        )
    if not np.all(np.isfinite(y)):
        raise ConfigError("input sequence must be finite")
    if boundary.kind == "one_sided_Z":
        if sys.domain != "one_sided":
            raise ConfigError("one-sided boundary on a two-sided system")
        if np.linalg.norm(y[0]) != 0.0:
            raise ConfigError("one-sided inputs must vanish at index 0")
    elif sys.domain != "two_sided":
        raise ConfigError("two-sided boundary on a one-sided system")
    return y


def solve_admissibility(sys: LinearSystem, proj: ProjectionFamily, y, beta: float,
                        rate: GrowthRate, nu: NuSequence,
                        boundary: BoundaryCondition,
                        variant: str = "plain") -> SolveReport:
    """Solve x_{n+1} - A_n x_n = y_{n+1} in the weighted spaces.

    The report carries the input 1-norm, the solution sup-norm and their
    ratio, which the dichotomy estimates bound by the constant D.
    """
    y = _check_solve_inputs(sys, proj, y, rate, nu, boundary)
    if variant not in ("plain", "abs"):
        raise ConfigError(f"unknown norm variant {variant!r}")

    x = _green_convolve(sys, proj, y)

    raws = _raw_matrices(sys)
    resid = x[1:] - np.einsum("kij,kj->ki", raws, x[:-1]) - y[1:]
    max_resid = float(np.max(np.linalg.norm(resid, axis=1))) if resid.size else 0.0

    if variant == "plain":
        in_spec = WeightedNormSpec(beta=float(beta), p=1)
        sol_spec = WeightedNormSpec(beta=float(beta), p=math.inf)
    else:
        in_spec = make_abs_spec(rate, beta, p=1)
        sol_spec = make_abs_spec(rate, beta, p=math.inf)

    in_norm = norm(y, in_spec, rate, nu)
    sol_norm = norm(x, sol_spec, rate, nu)
    if in_norm == 0.0:
        bound_c = 0.0 if sol_norm == 0.0 else float("inf")
    else:
        bound_c = sol_norm / in_norm

    p0 = proj.matrix_at(sys.window[0])
    left = float(np.linalg.norm(p0 @ (x[0] - y[0])))

    return SolveReport(
        window=sys.window, beta=float(beta), variant=variant,
        boundary_kind=boundary.kind, solution=x,
        max_residual=max_resid, input_norm_1beta=in_norm,
        solution_norm_infbeta=sol_norm, bound_constant=bound_c,
        left_constraint_norm=left,
    )


def oracle_solve(sys: LinearSystem, proj: ProjectionFamily, y,
                 boundary: BoundaryCondition,
                 reference: np.ndarray | None = None) -> np.ndarray:
    """Independent solver: one sparse square boundary value problem.

    Recurrence rows for every step; the left endpoint pins the range part of
    x to that of y, the right endpoint zeroes the complementary part.  When
    ``reference`` is given (a solution from the recursion path), the two are
    required to agree to ORACLE_TOL relative to the larger of the two.
    """
    if proj.window != sys.window:
        raise ConfigError("projection family window differs from system window")
    y = np.asarray(y, dtype=float)
    w = sys.window[1] - sys.window[0]
    d = sys.dim
    if y.shape != (w + 1, d):
        raise ConfigError(f"input sequence must have shape {(w + 1, d)}")
    if not np.all(np.isfinite(y)):
        raise ConfigError("input sequence must be finite")
    if boundary.kind == "one_sided_Z" and np.linalg.norm(y[0]) != 0.0:
        raise ConfigError("one-sided inputs must vanish at index 0")

    d_s = proj.stable_rank
    d_u = d - d_s
    n_unknowns = (w + 1) * d
    raws = _raw_matrices(sys)

    rows, cols, vals = [], [], []
    rhs = np.zeros(n_unknowns)
    for i in range(w):
        r0 = i * d
        for j in range(d):
            rows.append(r0 + j)
            cols.append((i + 1) * d + j)
            vals.append(1.0)
        a = raws[i]
        for j in range(d):
            for k in range(d):
                if a[j, k] != 0.0:
                    rows.append(r0 + j)
                    cols.append(i * d + k)
                    vals.append(-a[j, k])
        rhs[r0: r0 + d] = y[i + 1]

    base = w * d
    p_first = proj.matrix_at(sys.window[0])
    p_last = proj.matrix_at(sys.window[1])
    if d_s > 0:
        v_s = rowspace_basis(p_first, d_s)
        for j in range(d_s):
            for k in range(d):
                rows.append(base + j)
                cols.append(k)
                vals.append(v_s[k, j])
        rhs[base: base + d_s] = v_s.T @ y[0]
        base += d_s
    if d_u > 0:
        w_u = rowspace_basis(np.eye(d) - p_last, d_u)
        for j in range(d_u):
            for k in range(d):
                rows.append(base + j)
                cols.append(w * d + k)
                vals.append(w_u[k, j])

    mat = scipy.sparse.csr_matrix(
        (vals, (rows, cols)), shape=(n_unknowns, n_unknowns))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.sparse.linalg.MatrixRankWarning)
        sol = scipy.sparse.linalg.spsolve(mat, rhs)
    if not np.all(np.isfinite(sol)):
        raise SplittingDegenerateError("boundary value system is singular")
    x = sol.reshape(w + 1, d)

    if reference is not None:
        ref = np.asarray(reference, dtype=float)
        denom = max(float(np.max(np.linalg.norm(ref, axis=1))),
                    float(np.max(np.linalg.norm(x, axis=1))))
        if denom > 0.0:
            rel = float(np.max(np.linalg.norm(x - ref, axis=1))) / denom
            if rel > ORACLE_TOL:
                raise OracleMismatchError(
                    f"solver and oracle disagree: relative error {rel:.3e}"
                )
    return x


def operator_norm_T(sys: LinearSystem, proj: ProjectionFamily, rate: GrowthRate,
                    nu: NuSequence, beta: float, n_samples: int = 6,
                    seed: int = 0) -> dict:
    """Norm of the solution operator between the weighted spaces.

    exact_sup maximizes the weighted kernel ratio over window pairs in the
    log domain; sampled_lb drives the actual solver with an impulse at the
    maximizing pair (which attains the supremum) and with seeded random
    inputs of unit weighted 1-norm.
    """
    s_grid = stable_slack_grid(sys, proj, rate, nu, float(beta))
    u_grid, _, _ = unstable_slack_grid(sys, proj, rate, nu, -float(beta))
    a = s_grid.shape[0]
    u_grid = u_grid.copy()
    u_grid[np.arange(a), np.arange(a)] = np.nan
    if sys.domain == "one_sided":
        s_grid = s_grid.copy()
        s_grid[:, 0] = np.nan
        u_grid[:, 0] = np.nan

    def grid_argmax(g):
        flat = np.where(np.isnan(g), -np.inf, g)
        idx = int(np.argmax(flat))
        return np.unravel_index(idx, g.shape), float(flat.flat[idx])

    (sm, sn), s_best = grid_argmax(s_grid)
    (um, un), u_best = grid_argmax(u_grid)
    if s_best >= u_best:
        log_sup, arg = s_best, (sys.window[0] + sm, sys.window[0] + sn)
    else:
        log_sup, arg = u_best, (sys.window[0] + um, sys.window[0] + un)
    if log_sup == -math.inf:
        exact = 0.0
    elif log_sup >= math.log(np.finfo(float).max):
        exact = math.inf
    else:
        exact = math.exp(log_sup)

    boundary = (one_sided_boundary(proj) if sys.domain == "one_sided"
                else two_sided_boundary())
    in_spec = WeightedNormSpec(beta=float(beta), p=1)
    w = sys.window[1] - sys.window[0]
    d = sys.dim

    lb = 0.0
    samples = 0
    try:
        m_star, k_star = arg
        if exact > 0.0 and math.isfinite(exact):
            kern = GreenKernel(sys, proj)
            g = kern.at(m_star, k_star)
            _, _, vt = np.linalg.svd(g)
            y = np.zeros((w + 1, d))
            y[k_star - sys.window[0]] = vt[0]
            scale = norm(y, in_spec, rate, nu)
            rep = solve_admissibility(sys, proj, y / scale, beta, rate, nu, boundary)
            lb = max(lb, rep.solution_norm_infbeta)
            samples += 1
        rng = np.random.default_rng([int(seed), 7])
        for _ in range(n_samples):
            y = rng.standard_normal((w + 1, d))
            if sys.domain == "one_sided":
                y[0] = 0.0
            scale = norm(y, in_spec, rate, nu)
            if not (scale > 0.0 and math.isfinite(scale)):
                continue
            rep = solve_admissibility(sys, proj, y / scale, beta, rate, nu, boundary)
            lb = max(lb, rep.solution_norm_infbeta)
            samples += 1
    except OverflowError:
        pass  # raw-domain probing unavailable at this scale; the sup stands

    return {"exact_sup": exact, "sampled_lb": lb,
            "argmax_pair": [int(arg[0]), int(arg[1])], "samples": samples}


def uniqueness_probe(sys: LinearSystem, proj: ProjectionFamily, rate: GrowthRate,
                     nu: NuSequence, beta: float, z_basis,
                     margin_per_logmu: float | None = None) -> dict:
    """Margin test behind uniqueness: weighted homogeneous orbits out of the
    candidate initial subspace must grow, so they leave every bounded ball.

    Finite windows cannot certify an asymptotic statement; the verdict is
    "uniqueness plausible", "inconclusive", or "vacuously unique" for the
    zero subspace.
    """
    z = np.asarray(z_basis, dtype=float)
    if z.ndim != 2 or z.shape[0] != sys.dim:
        raise ConfigError("Z basis must be a d x k matrix")
    lm = rate.log_values
    k = z.shape[1]
    if k == 0:
        return {"verdict": "vacuously unique", "margin": 0.0, "slopes": [],
                "traces": np.zeros((lm.size, 0)), "beta": float(beta)}

    if margin_per_logmu is None:
        try:
            cert = fit_certificate(sys, proj, rate, nu)
            margin_per_logmu = max(0.0, (cert.lam - abs(beta) - cert.eps) / 2.0)
        except FitError:
            margin_per_logmu = math.inf

    w = sys.window[1] - sys.window[0]
    traces = np.empty((w + 1, k))
    for j in range(k):
        v = z[:, j] / np.linalg.norm(z[:, j])
        c = 0.0
        traces[0, j] = beta * lm[0]
        for i in range(w):
            v = sys.mats[i] @ v
            s = float(np.linalg.norm(v))
            if s == 0.0 or sys.log_scales[i] == float("-inf"):
                c = -math.inf
                traces[i + 1:, j] = -math.inf
                break
            v /= s
            c += float(sys.log_scales[i]) + math.log(s)
            traces[i + 1, j] = beta * lm[i + 1] + c

    slopes = []
    ok = True
    for j in range(k):
        col = traces[:, j]
        if not np.all(np.isfinite(col)):
            slopes.append(-math.inf)
            ok = False
            continue
        sl, _ = slope_intercept(lm, col)
        slopes.append(float(sl))
        if not sl >= margin_per_logmu:
            ok = False
    verdict = "uniqueness plausible" if ok else "inconclusive"
    return {"verdict": verdict, "margin": float(margin_per_logmu),
            "slopes": slopes, "traces": traces, "beta": float(beta)}


def run_counterexample(n_max: int):
    """Table (n, log x_n, log lower_bound) for the divergence example.

    The input sequence has unit weighted 1-norm term by term, yet the
    solution's weighted sup-norm grows without bound: admissibility genuinely
    needs the summability of the input side.  All arithmetic stays in the
    log domain; the raw sequence values dwarf double range almost instantly.
    """
    if not isinstance(n_max, int) or not 1 <= n_max <= 40:
        raise ConfigError("n_max must be an integer in [1, 40]")
    e_pow = np.exp(np.arange(0.0, n_max + 2.0))  # log mu_n for n = 0..n_max+1

    # log of the k-th summand: log(1/phi_k) + log mu_k / 2
    deltas = e_pow[1:] - e_pow[:-1]
    log_inv_phi = deltas + np.log1p(-np.exp(-deltas))
    terms = log_inv_phi + 0.5 * e_pow[:-1]

    rows = []
    for n in range(1, n_max + 1):
        log_x = -0.5 * e_pow[n] + logsumexp(terms[1: n + 1])
        a = 0.5 * (e_pow[n + 1] - e_pow[n])
        b = 0.5 * (e_pow[1] - e_pow[n])
        log_bound = math.log(2.0) + a + math.log1p(-math.exp(b - a))
        if log_x + 1e-9 < log_bound:
            raise AnalysisError(
                f"divergence table violated its lower bound at n={n}"
            )
        rows.append((n, float(log_x), float(log_bound)))
    return rows
