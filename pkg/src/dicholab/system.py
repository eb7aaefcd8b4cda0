"""Nonautonomous linear difference equations x_{n+1} = A_n x_n on a window.

Coefficients are stored in a scaled form A_n = exp(log_scale_n) * M_n with
M_n kept at unit spectral norm.  For moderate systems this is invisible; for
systems tied to fast rates (doubly exponential) the raw A_n underflow or
overflow doubles long before the window ends, while the scaled form stays
exact in the log domain.

The planted-model builder manufactures systems with a known dichotomy:
block-diagonal contraction/expansion coefficients conjugated by a similarity
L_n = Q_n W, with Q_n Haar orthogonal per index and W a fixed matrix of
bounded condition number.  Orthogonal factors drop out of every spectral
norm, so the planted decay data stays exactly linear in log mu and the
ground-truth constants are sharp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AnalysisError, ConfigError, KernelSingularError
from .linalg import haar_orthogonal, random_bounded_cond, spectral_norm
from .rates import MAX_WINDOW, GrowthRate, NuSequence

#: relative floor below which a restricted block counts as singular
KERNEL_SING_TOL = 1e-10


@dataclass(frozen=True)
class LinearSystem:
    """Coefficients A_n for n = window[0] .. window[1]-1."""

    dim: int
    domain: str
    window: tuple[int, int]
    log_scales: np.ndarray = field(repr=False)
    mats: np.ndarray = field(repr=False)

    def __post_init__(self):
        n_min, n_max = self.window
        w = n_max - n_min
        if self.domain not in ("one_sided", "two_sided"):
            raise ConfigError(f"unknown domain {self.domain!r}")
        if self.domain == "one_sided" and n_min != 0:
            raise ConfigError("one-sided windows start at 0")
        if w < 1:
            raise ConfigError("window must contain at least one step")
        if w > MAX_WINDOW:
            raise ConfigError(f"window length {w} exceeds cap {MAX_WINDOW}")
        ls = np.asarray(self.log_scales, dtype=float)
        ms = np.asarray(self.mats, dtype=float)
        if ls.shape != (w,) or ms.shape != (w, self.dim, self.dim):
            raise ConfigError("coefficient arrays do not match window and dim")
        if np.any(np.isposinf(ls)) or np.any(np.isnan(ls)):
            raise ConfigError("log scales must be finite or -inf")
        if not np.all(np.isfinite(ms)):
            raise ConfigError("coefficient matrices must have finite entries")
        ms = ms.copy()
        ms[np.isneginf(ls)] = 0.0
        object.__setattr__(self, "log_scales", ls)
        object.__setattr__(self, "mats", ms)

    @classmethod
    def from_matrices(cls, matrices, domain, window) -> "LinearSystem":
        """Build from raw A_n, given as (W, d, d) array aligned with the window."""
        a = np.asarray(matrices, dtype=float)
        if a.ndim != 3 or a.shape[1] != a.shape[2]:
            raise ConfigError("matrices must be a (steps, d, d) array")
        if not np.all(np.isfinite(a)):
            raise ConfigError("coefficient matrices must have finite entries")
        scales = np.array([spectral_norm(m) for m in a])
        with np.errstate(divide="ignore"):
            ls = np.log(scales)
        ms = np.where(scales[:, None, None] > 0, a / np.where(scales == 0, 1.0, scales)[:, None, None], 0.0)
        return cls(dim=a.shape[1], domain=domain, window=tuple(window), log_scales=ls, mats=ms)

    @classmethod
    def from_scaled(cls, log_scales, mats, domain, window) -> "LinearSystem":
        mats = np.asarray(mats, dtype=float)
        return cls(dim=mats.shape[1], domain=domain, window=tuple(window),
                   log_scales=np.asarray(log_scales, dtype=float), mats=mats)

    def step_index(self, n: int) -> int:
        if n < self.window[0] or n >= self.window[1]:
            raise ConfigError(f"no coefficient at index {n} (window {self.window})")
        return n - self.window[0]

    def matrix(self, n: int) -> np.ndarray:
        """Raw A_n; raises if exp(log_scale) is not representable."""
        i = self.step_index(n)
        ls = self.log_scales[i]
        if ls == float("-inf"):
            return np.zeros((self.dim, self.dim))
        if ls > math.log(np.finfo(float).max):
            raise OverflowError(
                f"coefficient at n={n} has log scale {ls:.3g}; "
                "use the scaled interfaces for this system"
            )
        return math.exp(ls) * self.mats[i]

    def matrices(self) -> np.ndarray:
        return np.stack([self.matrix(n) for n in range(self.window[0], self.window[1])])

    def restrict(self, n_lo: int, n_hi: int) -> "LinearSystem":
        """Sub-window [n_lo, n_hi]; keeps the domain unless the left end moves."""
        if n_lo < self.window[0] or n_hi > self.window[1] or n_hi - n_lo < 1:
            raise ConfigError("invalid sub-window")
        i0 = n_lo - self.window[0]
        i1 = n_hi - self.window[0]
        domain = self.domain
        if domain == "one_sided" and n_lo != 0:
            domain = "two_sided"
        return LinearSystem(dim=self.dim, domain=domain, window=(n_lo, n_hi),
                            log_scales=self.log_scales[i0:i1].copy(),
                            mats=self.mats[i0:i1].copy())


def evolution(sys: LinearSystem, m: int, n: int) -> np.ndarray:
    """Forward evolution A_{m-1} ... A_n (identity for m == n), raw."""
    if m < n:
        raise ConfigError("evolution runs forward; use evolution_on_unstable for m < n")
    acc = np.eye(sys.dim)
    for k in range(n, m):
        acc = sys.matrix(k) @ acc
    return acc


def evolution_scaled(sys: LinearSystem, m: int, n: int):
    """Forward evolution as (log_scale, M) with spectral norm of M equal to 1.

    Renormalizes after every step, so products over doubly exponential
    windows never leave the representable range.
    """
    if m < n:
        raise ConfigError("evolution runs forward; use evolution_on_unstable for m < n")
    c = 0.0
    r = np.eye(sys.dim)
    for k in range(n, m):
        i = sys.step_index(k)
        r = sys.mats[i] @ r
        s = spectral_norm(r)
        if s == 0.0 or sys.log_scales[i] == float("-inf"):
            return float("-inf"), np.zeros((sys.dim, sys.dim))
        r = r / s
        c += sys.log_scales[i] + math.log(s)
    return c, r


def kernel_step_matrix(sys: LinearSystem, proj, n: int) -> np.ndarray:
    """Restriction of the unit-normalized A_n to the complementary subspaces.

    Returns E_n = K_{n+1}^T M_n K_n in the orthonormal kernel bases of the
    projection family; raw A_n equals exp(log_scale_n) * M_n.
    """
    k_lo = proj.kernel_basis(n)
    k_hi = proj.kernel_basis(n + 1)
    return k_hi.T @ sys.mats[sys.step_index(n)] @ k_lo


def _kernel_chain(sys, proj, m, n):
    """Scaled product of kernel-restricted steps from m up to n (log_scale, F)."""
    d_u = sys.dim - proj.stable_rank
    c = 0.0
    f = np.eye(d_u)
    for k in range(m, n):
        e = kernel_step_matrix(sys, proj, k)
        sv = np.linalg.svd(e, compute_uv=False)
        if sv.size and (sv[-1] <= KERNEL_SING_TOL * sv[0] or sv[0] == 0.0):
            raise KernelSingularError(
                f"coefficient at n={k} is singular on the complementary subspace"
            )
        f = e @ f
        s = spectral_norm(f)
        f = f / s
        c += sys.log_scales[sys.step_index(k)] + math.log(s)
    return c, f


def evolution_on_unstable(sys: LinearSystem, proj, m: int, n: int) -> np.ndarray:
    """Backward evolution on the complementary subspace, m <= n.

    Coordinates: input in the orthonormal kernel basis at n, output in the
    one at m.  This is the inverse of the forward restriction, the only
    direction in which non-invertible coefficients still make sense.
    """
    if m > n:
        raise ConfigError("backward evolution needs m <= n")
    d_u = sys.dim - proj.stable_rank
    if d_u == 0:
        return np.zeros((0, 0))
    c, f = _kernel_chain(sys, proj, m, n)
    if c == float("-inf"):
        raise KernelSingularError("complementary dynamics collapsed to zero")
    if -c > math.log(np.finfo(float).max):
        raise OverflowError("backward evolution not representable; use scaled sweeps")
    return np.linalg.inv(f) * math.exp(-c)


def evolution_backward_embedded(sys: LinearSystem, proj, m: int, n: int) -> np.ndarray:
    """d x d matrix K_m F^{-1} K_n^T (Id - P_n): backward evolution composed
    with the complementary projection, embedded in the ambient space."""
    d_u = sys.dim - proj.stable_rank
    if d_u == 0:
        return np.zeros((sys.dim, sys.dim))
    f_inv = evolution_on_unstable(sys, proj, m, n)
    k_m = proj.kernel_basis(m)
    k_n = proj.kernel_basis(n)
    p_n = proj.matrix_at(n)
    return k_m @ f_inv @ (k_n.T @ (np.eye(sys.dim) - p_n))


@dataclass(frozen=True)
class PlantedModel:
    """A system with known dichotomy data, for oracles and regression tests."""

    system: LinearSystem
    projections: "object"
    certificate: "object"
    similarity: np.ndarray = field(repr=False)
    lambda_stable: float
    lambda_unstable: float
    dims: tuple[int, int]
    seed: int
    kernel_basis_at_start: np.ndarray = field(repr=False)


def make_planted_model(rate: GrowthRate, nu: NuSequence, lam_s: float, lam_u: float,
                       dims: tuple[int, int], cond: float = 1.0, seed: int = 0) -> PlantedModel:
    """Plant a dichotomy with decay lam_s, growth lam_u and a nu twist.

    Stable coefficient s_n = (mu_{n+1}/mu_n)^{-lam_s} * nu_n/nu_{n+1}, unstable
    u_n = (mu_{n+1}/mu_n)^{lam_u}.  With cond == 1 the similarity is the
    identity; otherwise L_n = Q_n W with fresh Haar Q_n per index and a fixed
    W of condition number cond, which leaves every planted norm exact.
    """
    from .dichotomy import DichotomyCertificate, ProjectionFamily

    if lam_s <= 0 or lam_u <= 0:
        raise ConfigError("planted exponents must be positive")
    d_s, d_u = int(dims[0]), int(dims[1])
    d = d_s + d_u
    if d < 1 or d_s < 0 or d_u < 0:
        raise ConfigError("need at least one dimension")
    if rate.window != nu.window:
        raise ConfigError("rate and nu windows differ")

    n_min, n_max = rate.window
    w = n_max - n_min
    lm = rate.log_values
    ln = nu.log_values

    if cond <= 1.0:
        w_fix = np.eye(d)
        sims = np.broadcast_to(np.eye(d), (w + 1, d, d)).copy()
        sims_inv = sims.copy()
    else:
        root = np.random.default_rng([int(seed), 0x5EED])
        w_fix = random_bounded_cond(root, d, cond)
        w_inv_fix = np.linalg.inv(w_fix)
        # per-index seed words must be non-negative; negative indices on
        # two-sided windows wrap into uint32 space, indices >= 0 are unchanged
        qs = [haar_orthogonal(
                  np.random.default_rng([int(seed), 1, (n_min + i) % 2**32]), d)
              for i in range(w + 1)]
        sims = np.stack([q @ w_fix for q in qs])
        sims_inv = np.stack([w_inv_fix @ q.T for q in qs])
    w_inv = np.linalg.inv(w_fix)

    j = np.zeros((d, d))
    j[:d_s, :d_s] = np.eye(d_s)

    log_scales = np.empty(w)
    mats = np.empty((w, d, d))
    for i in range(w):
        dl = lm[i + 1] - lm[i]
        log_s = -(lam_s * dl) + (ln[i] - ln[i + 1])
        log_u = lam_u * dl
        if d_u == 0:
            scale = log_s
            core = np.eye(d)
        elif d_s == 0:
            scale = log_u
            core = np.eye(d)
        else:
            # the stable block rides inside the unstable scale; exp underflows
            # to zero harmlessly when the gap is extreme
            scale = log_u
            core = np.zeros((d, d))
            gap = log_s - log_u
            core[:d_s, :d_s] = (math.exp(gap) if gap > -745.0 else 0.0) * np.eye(d_s)
            core[d_s:, d_s:] = np.eye(d_u)
        mats[i] = sims[i + 1] @ core @ sims_inv[i]
        log_scales[i] = scale

    system = LinearSystem(dim=d, domain=rate.domain, window=rate.window,
                          log_scales=log_scales, mats=mats)

    projs = np.stack([sims[i] @ j @ sims_inv[i] for i in range(w + 1)])
    family = ProjectionFamily(window=rate.window, projections=projs, stable_rank=d_s)

    d_true = 1.0
    if 0 < d_s:
        d_true = max(d_true, spectral_norm(w_fix @ j @ w_inv))
    if 0 < d_u:
        d_true = max(d_true, spectral_norm(w_fix @ (np.eye(d) - j) @ w_inv))
    lam_true = min(lam_s if d_s > 0 else lam_u, lam_u if d_u > 0 else lam_s)
    eps_true = nu.epsilon if nu.epsilon is not None else 0.0
    cert = DichotomyCertificate(D=float(d_true), lam=float(lam_true), eps=float(eps_true))

    z0 = sims[0][:, d_s:]
    if d_u > 0:
        z0 = np.linalg.qr(z0)[0]
    return PlantedModel(system=system, projections=family, certificate=cert,
                        similarity=sims, lambda_stable=float(lam_s),
                        lambda_unstable=float(lam_u), dims=(d_s, d_u),
                        seed=int(seed), kernel_basis_at_start=z0)


def system_to_json(sys: LinearSystem) -> dict:
    return {
        "dim": sys.dim,
        "domain": sys.domain,
        "window": list(sys.window),
        "matrices": [
            {
                "n": int(sys.window[0] + i),
                "rows": sys.mats[i].tolist(),
                "log_scale": None if sys.log_scales[i] == float("-inf") else float(sys.log_scales[i]),
            }
            for i in range(sys.window[1] - sys.window[0])
        ],
    }


def system_from_json(doc: dict) -> LinearSystem:
    window = (int(doc["window"][0]), int(doc["window"][1]))
    w = window[1] - window[0]
    d = int(doc["dim"])
    log_scales = np.full(w, float("-inf"))
    mats = np.zeros((w, d, d))
    seen = set()
    for entry in doc["matrices"]:
        n = int(entry["n"])
        i = n - window[0]
        if i < 0 or i >= w or i in seen:
            raise ConfigError(f"matrix index {n} outside window or duplicated")
        seen.add(i)
        rows = np.asarray(entry["rows"], dtype=float)
        if rows.shape != (d, d):
            raise ConfigError(f"matrix at n={n} has wrong shape")
        if entry.get("log_scale") is None:
            s = spectral_norm(rows)
            if s > 0:
                mats[i] = rows / s
                log_scales[i] = math.log(s)
        else:
            mats[i] = rows
            log_scales[i] = float(entry["log_scale"])
    if len(seen) != w:
        raise ConfigError("missing coefficient matrices")
    return LinearSystem(dim=d, domain=doc["domain"], window=window,
                        log_scales=log_scales, mats=mats)


def planted_to_json(model: PlantedModel) -> dict:
    doc = system_to_json(model.system)
    doc["projections"] = [
        {"n": int(model.system.window[0] + i), "rows": p.tolist()}
        for i, p in enumerate(model.projections.projections)
    ]
    doc["similarity"] = [
        {"n": int(model.system.window[0] + i), "rows": s.tolist()}
        for i, s in enumerate(model.similarity)
    ]
    doc["certificate"] = {"D": model.certificate.D, "lambda": model.certificate.lam,
                          "epsilon": model.certificate.eps}
    doc["planted"] = {"lambda_stable": model.lambda_stable,
                      "lambda_unstable": model.lambda_unstable,
                      "dims": list(model.dims), "seed": model.seed}
    return doc
