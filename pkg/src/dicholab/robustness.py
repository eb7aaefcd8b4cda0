"""Perturbations at the edge of the admissible size, and what survives them.

The perturbation budget per step is a product of a summable envelope, the
weight ratio of consecutive indices, and a global amplitude.  Generated
perturbations saturate that budget exactly: each B_n is the budget radius
times a Haar-random orthogonal direction, so its spectral norm attains the
bound with equality and any persistence observed is persistence under the
worst admissible magnitude.

The smallness margin mirrors the contraction argument: the difference
operator is invertible with the solution operator as inverse, so a
perturbation whose relative size (amplitude times envelope sum times
solution-operator norm, with a triangle-inequality envelope for the graph
norm) stays below one cannot destroy invertibility.  The prediction is one
directional: margin below one forces persistence, margin above one merely
stops promising it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .admissibility import GreenKernel, operator_norm_T
from .dichotomy import DichotomyCertificate, ProjectionFamily
from .errors import AnalysisError, ConfigError
from .linalg import haar_orthogonal, max_principal_angle, spectral_norm
from .rates import GrowthRate, NuSequence, WeightedNormSpec
from .rates import norm as weighted_norm
from .splitting import (
    GAP_THRESHOLD,
    CharacterizeResult,
    _restrict_nu,
    _restrict_rate,
    characterize,
)
from .system import LinearSystem

PERT_STREAM = 11


def geometric_gamma(window, ratio: float = 0.5) -> np.ndarray:
    """Envelope gamma_i = ratio**i over the window's steps."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError("ratio must lie in (0, 1)")
    w = window[1] - window[0]
    return ratio ** np.arange(w, dtype=float)


@dataclass(frozen=True)
class PerturbationSpec:
    """Budget data: per-step envelope, amplitude, direction seed, weight."""

    gamma: np.ndarray = field(repr=False)
    c: float = 0.1
    seed: int = 0
    beta: float = 0.0

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim != 1 or g.size == 0:
            raise ConfigError("gamma must be a nonempty vector over the steps")
        if not np.all(np.isfinite(g)) or np.any(g <= 0.0):
            raise ConfigError("gamma entries must be positive finite")
        if not math.isfinite(float(np.sum(g))):
            raise ConfigError("gamma must have a finite sum")
        if not (math.isfinite(self.c) and self.c >= 0.0):
            raise ConfigError("amplitude c must be finite and nonnegative")
        if not math.isfinite(self.beta):
            raise ConfigError("beta must be finite")
        object.__setattr__(self, "gamma", g)

    @property
    def gamma_sum(self) -> float:
        return float(np.sum(self.gamma))


def perturbation_radii(rate: GrowthRate, nu: NuSequence, spec: PerturbationSpec) -> np.ndarray:
    """Per-step norm budget, computed in the log domain so extreme weight
    ratios cannot overflow before they cancel."""
    lm = rate.log_values
    ln = nu.log_values
    if spec.gamma.size != lm.size - 1:
        raise ConfigError("gamma length must equal the number of steps")
    if spec.c == 0.0:
        return np.zeros(spec.gamma.size)
    log_rho = (math.log(spec.c) + np.log(spec.gamma)
               + spec.beta * lm[:-1] - ln[1:] - spec.beta * lm[1:])
    return np.exp(log_rho)


def make_perturbation(sys: LinearSystem, rate: GrowthRate, nu: NuSequence,
                      spec: PerturbationSpec,
                      certificate: DichotomyCertificate | None = None) -> np.ndarray:
    """Step matrices B_n saturating the admissible budget in random directions.

    Orthogonal directions have spectral norm one exactly, so the measured
    norm of B_n equals its budget radius to rounding.  When a reference
    certificate is supplied, beta is checked against its admissible weight
    range.
    """
    if rate.window != sys.window or nu.window != sys.window:
        raise ConfigError("rate/nu windows differ from system window")
    if certificate is not None:
        from .dichotomy import beta_range

        lo, hi = beta_range(certificate, sys.domain)
        if not lo < spec.beta < hi:
            raise ConfigError(
                f"beta {spec.beta:g} outside admissible range ({lo:g}, {hi:g})"
            )
    rho = perturbation_radii(rate, nu, spec)
    d = sys.dim
    out = np.zeros((rho.size, d, d))
    if spec.c == 0.0:
        return out
    for i in range(rho.size):
        # seed words must be non-negative; negative indices wrap into uint32
        n_word = (sys.window[0] + i) % 2**32
        rng = np.random.default_rng([int(spec.seed), PERT_STREAM, n_word])
        out[i] = rho[i] * haar_orthogonal(rng, d)
    return out


def perturbed_system(sys: LinearSystem, b: np.ndarray) -> LinearSystem:
    """System with coefficients A_n + B_n, assembled in scaled form.

    Each step is rescaled around the larger of the two summands so neither
    an enormous nor a vanishing coefficient forces a raw-magnitude overflow.
    """
    b = np.asarray(b, dtype=float)
    w = sys.window[1] - sys.window[0]
    if b.shape != (w, sys.dim, sys.dim):
        raise ConfigError("perturbation shape must match the system's steps")
    if not np.all(np.isfinite(b)):
        raise ConfigError("perturbation entries must be finite")
    mats = np.empty_like(sys.mats)
    log_scales = np.empty(w)
    for i in range(w):
        la = float(sys.log_scales[i])
        nb = spectral_norm(b[i])
        lb = math.log(nb) if nb > 0.0 else -math.inf
        pivot = max(la, lb)
        if pivot == -math.inf:
            mats[i] = 0.0
            log_scales[i] = -math.inf
            continue
        core = np.zeros((sys.dim, sys.dim))
        if la > -math.inf:
            core += math.exp(la - pivot) * sys.mats[i]
        if lb > -math.inf:
            core += math.exp(lb - pivot) * (b[i] / nb)
        s = spectral_norm(core)
        if s == 0.0:
            mats[i] = 0.0
            log_scales[i] = -math.inf
        else:
            mats[i] = core / s
            log_scales[i] = pivot + math.log(s)
    return LinearSystem.from_scaled(log_scales, mats, sys.domain, sys.window)


@dataclass(frozen=True)
class GraphNormOperator:
    """First-difference or perturbation-multiplication operator on sequences."""

    sys: LinearSystem
    rate: GrowthRate
    nu: NuSequence
    beta: float
    mode: str
    b: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in ("A_beta", "B_beta"):
            raise ConfigError(f"unknown graph operator mode {self.mode!r}")
        if self.rate.window != self.sys.window or self.nu.window != self.sys.window:
            raise ConfigError("rate/nu windows differ from system window")
        if self.mode == "B_beta":
            w = self.sys.window[1] - self.sys.window[0]
            if self.b is None or np.asarray(self.b).shape != (w, self.sys.dim, self.sys.dim):
                raise ConfigError("B_beta mode needs the step perturbations")
            object.__setattr__(self, "b", np.asarray(self.b, dtype=float))


def apply_graph_operator(op: GraphNormOperator, x) -> np.ndarray:
    """Sequence whose entry at index n is x_n - A_{n-1}x_{n-1} (difference
    mode) or B_{n-1}x_{n-1} (perturbation mode); the first entry is zero by
    definition."""
    x = np.asarray(x, dtype=float)
    w = op.sys.window[1] - op.sys.window[0]
    if x.shape != (w + 1, op.sys.dim):
        raise ConfigError("sequence shape must be (window length, dim)")
    out = np.zeros_like(x)
    if op.mode == "A_beta":
        prop = np.einsum("kij,kj->ki", op.sys.mats, x[:-1])
        with np.errstate(over="ignore"):
            prop = prop * np.exp(op.sys.log_scales)[:, None]
        prop = np.where(np.isnan(prop), 0.0, prop)
        out[1:] = x[1:] - prop
    else:
        out[1:] = np.einsum("kij,kj->ki", op.b, x[:-1])
    return out


def graph_norm(x, sys: LinearSystem, rate: GrowthRate, nu: NuSequence,
               beta: float) -> float:
    """Sup-type weighted size of the sequence plus summed weighted size of
    its first difference along the dynamics."""
    op = GraphNormOperator(sys=sys, rate=rate, nu=nu, beta=beta, mode="A_beta")
    ax = apply_graph_operator(op, x)
    sup_spec = WeightedNormSpec(beta=beta, p=math.inf, variant="plain")
    sum_spec = WeightedNormSpec(beta=beta, p=1, variant="plain")
    return weighted_norm(x, sup_spec, rate) + weighted_norm(ax, sum_spec, rate, nu)


def smallness_margin(sys: LinearSystem, proj: ProjectionFamily, rate: GrowthRate,
                     nu: NuSequence, beta: float, spec: PerturbationSpec) -> float:
    """Contraction estimate c * (sum gamma) * ||T|| * (1 + c * sum gamma).

    ||T|| is the solution-operator norm, the inverse of the difference
    operator; the trailing factor converts it to a graph-norm bound.  Below
    one, the perturbed difference operator stays invertible.
    """
    if spec.c == 0.0:
        return 0.0
    if proj.window != sys.window:
        # projections recovered by characterize live on a trimmed window
        if not (sys.window[0] <= proj.window[0] and proj.window[1] <= sys.window[1]):
            raise ConfigError("projection window is not inside the system window")
        sys = sys.restrict(*proj.window)
        rate = _restrict_rate(rate, proj.window)
        nu = _restrict_nu(nu, proj.window)
    t = operator_norm_T(sys, proj, rate, nu, beta)["exact_sup"]
    cs = spec.c * spec.gamma_sum
    return float(cs * t * (1.0 + cs))


def dense_operator_norm(sys: LinearSystem, proj: ProjectionFamily, rate: GrowthRate,
                        nu: NuSequence, beta: float, limit: int = 50) -> float:
    """Solution-operator norm assembled pair by pair from raw kernel blocks.

    Independent cross-check for the grid-based computation; the quadratic
    pair count keeps it restricted to small windows.
    """
    w = sys.window[1] - sys.window[0]
    if w + 1 > limit:
        raise ConfigError(f"window length {w + 1} exceeds dense limit {limit}")
    kernel = GreenKernel(sys, proj)
    lm = rate.log_values
    ln = nu.log_values
    n_lo = 1 if sys.domain == "one_sided" else 0
    best = 0.0
    for j in range(n_lo, w + 1):
        for i in range(w + 1):
            g = spectral_norm(kernel.at(sys.window[0] + i, sys.window[0] + j))
            if g == 0.0:
                continue
            log_val = (math.log(g) - beta * float(lm[i])
                       + beta * float(lm[j]) - float(ln[j]))
            val = math.exp(log_val) if log_val < 700.0 else math.inf
            best = max(best, val)
    return best


@dataclass(frozen=True)
class PersistenceReport:
    """Paired certificates, geometry drift, and the contraction margin."""

    window: tuple[int, int]
    margin: float
    verdict: str
    base_certificate: DichotomyCertificate
    pert_certificate: DichotomyCertificate | None
    max_drift: float
    drift: np.ndarray = field(repr=False)
    failure: str | None = None
    c: float = math.nan
    gamma_sum: float = math.nan
    beta: float = math.nan
    seed: int | None = None

    def to_json(self) -> dict:
        def f(x):
            return float(x) if x is not None and math.isfinite(x) else None

        def cert(c):
            if c is None:
                return None
            return {"D": c.D, "lambda": c.lam, "epsilon": c.eps}

        return {
            "window": list(self.window),
            "margin": f(self.margin),
            "verdict": self.verdict,
            "failure": self.failure,
            "base_certificate": cert(self.base_certificate),
            "perturbed_certificate": cert(self.pert_certificate),
            "max_drift": f(self.max_drift),
            "drift": [f(x) for x in self.drift],
            "c": f(self.c),
            "gamma_sum": f(self.gamma_sum),
            "beta": f(self.beta),
            "seed": self.seed,
        }


def verify_persistence(sys: LinearSystem, b, rate: GrowthRate, nu: NuSequence,
                       spec: PerturbationSpec | None = None,
                       boundary_hint=None,
                       gap_threshold: float = GAP_THRESHOLD,
                       tail_horizon: int | None = None) -> PersistenceReport:
    """Characterize the system with and without the perturbation and compare.

    A failure while characterizing the unperturbed system propagates: there
    is no baseline to compare against.  A failure on the perturbed system is
    the measured outcome and lands in the report, stage tag and all.
    """
    base = characterize(sys, rate, nu, boundary_hint=boundary_hint,
                        gap_threshold=gap_threshold, tail_horizon=tail_horizon)
    sys_p = perturbed_system(sys, b)

    if spec is None:
        margin = math.nan
        c = math.nan
        gsum = math.nan
        beta = math.nan
        seed = None
    else:
        margin = smallness_margin(sys, base.projections, rate, nu, spec.beta, spec)
        c = spec.c
        gsum = spec.gamma_sum
        beta = spec.beta
        seed = int(spec.seed)

    window = base.splitting.window
    try:
        pert: CharacterizeResult | None = characterize(
            sys_p, rate, nu, boundary_hint=boundary_hint,
            gap_threshold=gap_threshold, tail_horizon=tail_horizon)
    except AnalysisError as e:
        return PersistenceReport(
            window=window, margin=margin, verdict="not_persisted",
            base_certificate=base.certificate, pert_certificate=None,
            max_drift=math.nan, drift=np.zeros(0), failure=str(e),
            c=c, gamma_sum=gsum, beta=beta, seed=seed)

    a = window[1] - window[0] + 1
    drift = np.empty(a)
    rank_changed = base.projections.stable_rank != pert.projections.stable_rank
    for i in range(a):
        if rank_changed:
            drift[i] = math.pi / 2.0
            continue
        n = window[0] + i
        dr = max_principal_angle(base.projections.range_basis(n),
                                 pert.projections.range_basis(n))
        dk = max_principal_angle(base.projections.kernel_basis(n),
                                 pert.projections.kernel_basis(n))
        drift[i] = max(dr, dk)
    if pert.verify.passed:
        verdict = "persisted"
        failure = None
    else:
        verdict = "not_persisted"
        failure = "; ".join(pert.verify.failure_reasons)
    return PersistenceReport(
        window=window, margin=margin, verdict=verdict,
        base_certificate=base.certificate, pert_certificate=pert.certificate,
        max_drift=float(np.max(drift)) if drift.size else 0.0, drift=drift,
        failure=failure, c=c, gamma_sum=gsum, beta=beta, seed=seed)
