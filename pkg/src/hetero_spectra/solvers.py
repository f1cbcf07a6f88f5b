"""Solvers for the decomposition of a covariance into low-rank plus diagonal.

The central routine is :func:`alternating_solve`, which alternates a
spectral shrinkage step on the low-rank part with an exact diagonal
update. The named solvers (``rmtfa``, ``soft_impute_diag``,
``heteropca_psd``) are thin wrappers choosing the shrinkage operator;
``heteropca`` and ``deflated_heteropca`` implement the fixed-budget
iterations on the hollowed matrix directly.
"""

from dataclasses import dataclass, field

import numpy as np

from .matcore import _as_sym, eig_sym, pdiag, poffdiag, nuclear_norm_sym
from .shrinkage import ProxSpec, _prox_with_spectrum, best_rank_r

__all__ = [
    "StopRule",
    "SolverTrace",
    "Decomposition",
    "objective_F",
    "alternating_solve",
    "rmtfa",
    "soft_impute_diag",
    "heteropca",
    "deflated_heteropca",
    "heteropca_psd",
    "diag_deleted_pca",
    "pca_baseline",
    "extract_subspace",
    "numerical_rank_sym",
]

# smallest positive float: the stop rule fires only at an exact fixed point
_STATIONARY_TOL = 5e-324

_METHOD_BY_KIND = {
    "psd_soft": "rmtfa",
    "sym_soft": "si",
    "rank": "paf",
    "rank_psd": "hpca_plus",
}


@dataclass(frozen=True)
class StopRule:
    """Stopping rule for the alternating solvers.

    Iteration halts once ``||L_k - L_{k-1}||_F <= rel_tol * max(1, ||L_{k-1}||_F)``
    or after ``max_iter`` low-rank updates, whichever comes first.
    """

    rel_tol: float = 1e-10
    max_iter: int = 1000

    def __post_init__(self):
        if not np.isfinite(self.rel_tol) or self.rel_tol <= 0:
            raise ValueError(f"StopRule: rel_tol must be finite and > 0, got {self.rel_tol}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError(f"StopRule: max_iter must be an integer >= 1, got {self.max_iter}")


@dataclass
class SolverTrace:
    """Per-iteration diagnostics of an alternating solve.

    Entry ``i`` of each list belongs to iteration ``k = i + 1``.
    ``objective`` is the penalized fit, non-increasing along the run;
    ``fixed_point_residual`` is ``||L_k - L_{k-1}||_F`` (with ``L_0 = 0``);
    ``psi`` is the squared residual ``||Sigma - (L_k + D_k)||_F^2``.
    """

    objective: list = field(default_factory=list)
    fixed_point_residual: list = field(default_factory=list)
    psi: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    iterates: list | None = None


@dataclass
class Decomposition:
    """A fitted pair (L, D) with the method tag and its parameter."""

    L: np.ndarray
    D: np.ndarray
    method: str
    param: float
    converged: bool
    iterations: int


def _as_diag_matrix(d, p, name="d0"):
    d = np.asarray(d, dtype=float)
    if d.ndim == 1:
        if d.shape[0] != p:
            raise ValueError(f"{name}: expected length {p}, got {d.shape[0]}")
        out = np.zeros((p, p))
        np.fill_diagonal(out, d)
        d = out
    elif d.shape != (p, p):
        raise ValueError(f"{name}: expected shape ({p}, {p}), got {d.shape}")
    else:
        d = d.copy()
    if not np.all(np.isfinite(d)):
        raise ValueError(f"{name}: non-finite entries")
    if np.any(poffdiag(d) != 0.0):
        raise ValueError(f"{name}: off-diagonal entries must be exactly zero")
    return d


def _penalty(prox, kept):
    if prox.kind == "psd_soft":
        return prox.tau * float(np.sum(kept))
    if prox.kind == "sym_soft":
        return prox.tau * float(np.sum(np.abs(kept)))
    return 0.0  # rank constraints enter as indicators


def objective_F(sigma, L, D, tau):
    """Penalized objective ``tau*||L||_* + 0.5*||sigma - (L + D)||_F^2``.

    ``L`` must be exactly symmetric and ``D`` diagonal.
    """
    sigma = _as_sym(sigma, "objective_F")
    L = _as_sym(L, "objective_F: L")
    D = _as_diag_matrix(D, sigma.shape[0], "objective_F: D")
    if L.shape != sigma.shape:
        raise ValueError("objective_F: L shape does not match sigma")
    tau = float(tau)
    if not np.isfinite(tau) or tau < 0:
        raise ValueError(f"objective_F: tau must be finite and >= 0, got {tau}")
    return tau * nuclear_norm_sym(L) + 0.5 * float(np.sum((sigma - L - D) ** 2))


def alternating_solve(sigma, prox, d0=None, stop=None, keep_iterates=False):
    """Alternating minimization of the penalized covariance fit.

    Repeats ``L_k = prox(sigma - D_{k-1})`` and ``D_k = pdiag(sigma - L_k)``
    until the stop rule fires. Each half-step is an exact minimization of
    the objective in one block, so the recorded objective never increases.

    Parameters
    ----------
    sigma : (p, p) ndarray
        Exactly symmetric input matrix.
    prox : ProxSpec
        Shrinkage operator applied in the low-rank step.
    d0 : ndarray, optional
        Starting diagonal, as a length-p vector or a (p, p) diagonal
        matrix. Defaults to ``pdiag(sigma)``.
    stop : StopRule, optional
        Defaults to ``StopRule()``.
    keep_iterates : bool
        Record a copy of every ``L_k`` on the trace.

    Returns
    -------
    (Decomposition, SolverTrace)
    """
    sigma = _as_sym(sigma, "alternating_solve")
    if not isinstance(prox, ProxSpec):
        raise ValueError("alternating_solve: prox must be a ProxSpec")
    if stop is None:
        stop = StopRule()
    elif not isinstance(stop, StopRule):
        raise ValueError("alternating_solve: stop must be a StopRule")
    p = sigma.shape[0]
    method = _METHOD_BY_KIND[prox.kind]
    param = prox.tau if prox.tau is not None else prox.r

    if d0 is None and not sigma.any():
        # degenerate zero input: nothing to fit
        zero = np.zeros_like(sigma)
        trace = SolverTrace([0.0], [0.0], [0.0], True, 0, [zero.copy()] if keep_iterates else None)
        return Decomposition(zero, zero.copy(), method, param, True, 0), trace

    D = pdiag(sigma) if d0 is None else _as_diag_matrix(d0, p)
    L_prev = np.zeros_like(sigma)
    trace = SolverTrace(iterates=[] if keep_iterates else None)
    converged = False
    L = L_prev
    for k in range(1, stop.max_iter + 1):
        L, kept = _prox_with_spectrum(prox, sigma - D)
        R = sigma - L
        D = pdiag(R)
        psi = float(np.sum(poffdiag(R) ** 2))
        prev_norm = float(np.linalg.norm(L_prev))
        resid = float(np.linalg.norm(L - L_prev))
        trace.objective.append(_penalty(prox, kept) + 0.5 * psi)
        trace.fixed_point_residual.append(resid)
        trace.psi.append(psi)
        if keep_iterates:
            trace.iterates.append(L.copy())
        L_prev = L
        if resid <= stop.rel_tol * max(1.0, prev_norm):
            converged = True
            break
    trace.converged = converged
    trace.iterations = k
    # post-check: each half-step minimizes its block exactly, so the
    # objective can only drift up by float jitter, never genuinely
    allow = 1e-12 * max(1.0, trace.objective[0])
    for f_prev, f_next in zip(trace.objective, trace.objective[1:]):
        if f_next > f_prev + allow:
            raise RuntimeError(
                f"alternating_solve: objective increased from {f_prev!r} to {f_next!r}"
            )
    return Decomposition(L, D, method, param, converged, k), trace


def _check_tau_positive(tau, op):
    tau = float(tau)
    if not np.isfinite(tau) or tau <= 0:
        raise ValueError(f"{op}: tau must be finite and > 0, got {tau}")
    return tau


def rmtfa(sigma, tau, stop=None, d0=None, keep_iterates=False):
    """Nuclear-norm penalized fit with L restricted to the PSD cone.

    Minimizes ``tau*||L||_* + 0.5*||sigma - (L + D)||_F^2`` over PSD L and
    diagonal D. The objective is convex with a unique minimizer for
    ``tau > 0``; the returned L satisfies the fixed-point equation
    ``L = prox(poffdiag(sigma) + pdiag(L))`` up to the stop tolerance.

    Pass ``d0`` to warm-start the diagonal, e.g. from a solve at a nearby
    ``tau``.

    Returns
    -------
    (Decomposition, SolverTrace)
    """
    tau = _check_tau_positive(tau, "rmtfa")
    return alternating_solve(sigma, ProxSpec.psd_soft(tau), d0, stop, keep_iterates)


def soft_impute_diag(sigma, tau, stop=None, d0=None, keep_iterates=False):
    """Like :func:`rmtfa` but without the PSD restriction on L.

    The low-rank step is the signed eigenvalue soft-threshold, so the
    returned L can be indefinite.
    """
    tau = _check_tau_positive(tau, "soft_impute_diag")
    return alternating_solve(sigma, ProxSpec.sym_soft(tau), d0, stop, keep_iterates)


def _check_t_max(t_max, op):
    if int(t_max) != t_max or t_max < 1:
        raise ValueError(f"{op}: t_max must be an integer >= 1, got {t_max}")
    return int(t_max)


def heteropca(sigma, r, t_max=30, g0=None, keep_iterates=False):
    """Iterative diagonal imputation around a rank-r approximation.

    Starting from the hollowed matrix ``G_0 = poffdiag(sigma)`` (or ``g0``
    when given), repeats for ``t_max`` rounds

        ``L_t = best_rank_r(G_{t-1})``,
        ``G_t = poffdiag(G_{t-1}) + pdiag(L_t)``,

    so the off-diagonal of G never changes and the diagonal is refilled
    from the current low-rank fit.

    Returns
    -------
    (L, G) : final low-rank iterate and final imputed matrix.
        With ``keep_iterates=True``, ``(L, G, iterates)`` where
        ``iterates`` lists every ``L_t``.
    """
    sigma = _as_sym(sigma, "heteropca")
    t_max = _check_t_max(t_max, "heteropca")
    if g0 is None:
        G = poffdiag(sigma)
    else:
        G = _as_sym(g0, "heteropca: g0")
        if G.shape != sigma.shape:
            raise ValueError("heteropca: g0 shape does not match sigma")
        G = G.copy()
    iterates = [] if keep_iterates else None
    L = np.zeros_like(sigma)
    for _ in range(t_max):
        L = best_rank_r(G, r)
        G = poffdiag(G) + pdiag(L)
        if keep_iterates:
            iterates.append(L.copy())
    if keep_iterates:
        return L, G, iterates
    return L, G


def deflated_heteropca(sigma, r, t_max_per_stage=30, return_stages=False):
    """Rank-staged variant of :func:`heteropca`.

    Instead of fitting rank r at once, ranks are increased in stages. At
    each stage, with sigma_i the magnitudes of the eigenvalues of the
    current G (descending, sigma_{p+1} = 0) and r_prev the previous stage
    rank, the stage rank is the largest r' in (r_prev, r] with

        ``sigma_{r_prev+1} / sigma_{r'} <= 4``  (well-conditioned block)
        ``(sigma_{r'} - sigma_{r'+1}) / sigma_{r'} >= 1/r``  (relative gap)

    falling back to r when no r' qualifies. A vanishing sigma_{r'} fails
    both conditions. Each stage runs ``t_max_per_stage`` rounds of the
    imputation loop, carrying G across stages.

    Returns
    -------
    L : final low-rank iterate.
        With ``return_stages=True``, ``(L, stage_ranks)``.
    """
    sigma = _as_sym(sigma, "deflated_heteropca")
    p = sigma.shape[0]
    if int(r) != r or not 1 <= r <= p:
        raise ValueError(f"deflated_heteropca: rank must satisfy 1 <= r <= {p}, got {r}")
    r = int(r)
    t_max_per_stage = _check_t_max(t_max_per_stage, "deflated_heteropca")

    G = poffdiag(sigma)
    r_prev = 0
    stage_ranks = []
    L = np.zeros_like(sigma)
    while r_prev < r:
        svals = np.sort(np.abs(np.linalg.eigvalsh(G)))[::-1]
        svals = np.append(svals, 0.0)  # sigma_{p+1} := 0
        top = svals[r_prev]
        r_k = r  # sup of an empty candidate set
        for cand in range(r, r_prev, -1):
            s_c = svals[cand - 1]
            if s_c <= 0.0:
                continue
            if top / s_c <= 4.0 and (s_c - svals[cand]) / s_c >= 1.0 / r:
                r_k = cand
                break
        L, G = heteropca(sigma, r_k, t_max_per_stage, g0=G)
        stage_ranks.append(r_k)
        r_prev = r_k
    if return_stages:
        return L, stage_ranks
    return L


def _heteropca_psd_run(sigma, r, t_max, keep_iterates=False):
    stop = StopRule(rel_tol=_STATIONARY_TOL, max_iter=t_max)
    dec, trace = alternating_solve(sigma, ProxSpec.rank_psd(r), None, stop, keep_iterates)
    dec.converged = True  # fixed iteration budget, no tolerance to miss
    trace.converged = True
    return dec, trace


def heteropca_psd(sigma, r, t_max=30):
    """Alternating fit with a PSD rank-r projection in the low-rank step.

    Starting from ``D_0 = pdiag(sigma)``, runs ``t_max`` rounds of
    ``L_k = best_rank_r_psd(sigma - D_{k-1})``, ``D_k = pdiag(sigma - L_k)``
    (stopping early only at an exact fixed point).

    Returns
    -------
    (L, D) : final PSD low-rank part and diagonal part.
    """
    t_max = _check_t_max(t_max, "heteropca_psd")
    dec, _ = _heteropca_psd_run(sigma, r, t_max)
    return dec.L, dec.D


def diag_deleted_pca(sigma, r):
    """Best rank-r approximation of the hollowed matrix ``poffdiag(sigma)``."""
    sigma = _as_sym(sigma, "diag_deleted_pca")
    return best_rank_r(poffdiag(sigma), r)


def pca_baseline(sigma, r):
    """Leading r eigenvectors of sigma itself, as a (p, r) basis."""
    sigma = _as_sym(sigma, "pca_baseline")
    p = sigma.shape[0]
    if int(r) != r or not 1 <= r <= p:
        raise ValueError(f"pca_baseline: rank must satisfy 1 <= r <= {p}, got {r}")
    return eig_sym(sigma).vectors[:, : int(r)]


def numerical_rank_sym(m, rel_cutoff=1e-8):
    """Count of eigenvalues above ``rel_cutoff`` times the largest magnitude."""
    m = _as_sym(m, "numerical_rank_sym")
    if m.shape[0] == 0:
        return 0
    mags = np.abs(np.linalg.eigvalsh(m))
    top = float(np.max(mags))
    if top == 0.0:
        return 0
    return int(np.sum(mags > rel_cutoff * top))


def extract_subspace(x, r, return_info=False):
    """Leading-r eigenbasis of a low-rank part.

    Parameters
    ----------
    x : Decomposition or (p, p) ndarray
        The L matrix is taken from a Decomposition when one is passed.
    r : int
        Number of basis columns, 1 <= r <= p.
    return_info : bool
        Also return a flag marking numerical rank deficiency, i.e. fewer
        than r eigenvalues above the 1e-8 relative cutoff. The basis is
        still orthonormal in that case, completed from the remaining
        eigenvectors.

    Returns
    -------
    (p, r) ndarray, or ``(basis, deficient)`` with ``return_info=True``.
    """
    L = x.L if isinstance(x, Decomposition) else x
    L = _as_sym(L, "extract_subspace")
    p = L.shape[0]
    if int(r) != r or not 1 <= r <= p:
        raise ValueError(f"extract_subspace: rank must satisfy 1 <= r <= {p}, got {r}")
    r = int(r)
    basis = eig_sym(L).vectors[:, :r]
    if not return_info:
        return basis
    return basis, numerical_rank_sym(L) < r
