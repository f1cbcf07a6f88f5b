"""Spectral shrinkage and low-rank projection operators for symmetric matrices.

These are the per-iteration building blocks of the solvers: nuclear-norm
proximal maps (with and without a positive-semidefinite restriction) and
best rank-r approximations (signed and PSD-restricted).
"""

from dataclasses import dataclass

import numpy as np

from .matcore import eig_sym, symmetrize

__all__ = [
    "ProxSpec",
    "soft_threshold_psd",
    "soft_threshold_sym",
    "best_rank_r",
    "best_rank_r_psd",
    "apply_prox",
]

_KINDS = ("psd_soft", "sym_soft", "rank", "rank_psd")


@dataclass(frozen=True)
class ProxSpec:
    """Which shrinkage operator a solver applies at each iteration.

    ``kind`` selects the operator, ``tau`` parametrizes the soft-threshold
    kinds and ``r`` the fixed-rank kinds. Use the factory methods rather
    than the constructor.
    """

    kind: str
    tau: float | None = None
    r: int | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"ProxSpec: unknown kind {self.kind!r}")
        if self.kind in ("psd_soft", "sym_soft"):
            if self.tau is None or not np.isfinite(self.tau) or self.tau < 0:
                raise ValueError("ProxSpec: soft-threshold kinds need tau >= 0")
            if self.r is not None:
                raise ValueError("ProxSpec: r is not accepted for soft-threshold kinds")
        else:
            if self.r is None or int(self.r) != self.r or self.r < 1:
                raise ValueError("ProxSpec: rank kinds need integer r >= 1")
            if self.tau is not None:
                raise ValueError("ProxSpec: tau is not accepted for rank kinds")

    @classmethod
    def psd_soft(cls, tau):
        return cls("psd_soft", tau=float(tau))

    @classmethod
    def sym_soft(cls, tau):
        return cls("sym_soft", tau=float(tau))

    @classmethod
    def rank(cls, r):
        return cls("rank", r=int(r))

    @classmethod
    def rank_psd(cls, r):
        return cls("rank_psd", r=int(r))


def _rebuild(vecs, vals):
    # reconstruct only from the kept spectrum so an empty selection is an
    # exact zero matrix, not a rounded one
    if vals.size == 0:
        return np.zeros((vecs.shape[0], vecs.shape[0]))
    return symmetrize((vecs * vals) @ vecs.T)


def _check_tau(tau):
    tau = float(tau)
    if not np.isfinite(tau) or tau < 0:
        raise ValueError(f"tau must be finite and >= 0, got {tau}")
    return tau


def _check_rank(r, p):
    if int(r) != r:
        raise ValueError(f"rank must be an integer, got {r!r}")
    r = int(r)
    if not 1 <= r <= p:
        raise ValueError(f"rank must satisfy 1 <= r <= {p}, got {r}")
    return r


def _psd_soft(m, tau):
    vals, vecs = eig_sym(m)
    keep = vals > tau
    w = vals[keep] - tau
    return _rebuild(vecs[:, keep], w), w


def _sym_soft(m, tau):
    vals, vecs = eig_sym(m)
    keep = np.abs(vals) > tau
    w = np.sign(vals[keep]) * (np.abs(vals[keep]) - tau)
    return _rebuild(vecs[:, keep], w), w


def _rank(m, r):
    vals, vecs = eig_sym(m)
    # top r by magnitude; stable sort keeps the descending signed order on ties
    order = np.argsort(-np.abs(vals), kind="stable")[:r]
    w = vals[order]
    return _rebuild(vecs[:, order], w), w


def _rank_psd(m, r):
    vals, vecs = eig_sym(m)
    # top r of the signed spectrum, negative ones clipped to zero
    w = np.maximum(vals[:r], 0.0)
    keep = w > 0.0
    return _rebuild(vecs[:, :r][:, keep], w[keep]), w[keep]


def soft_threshold_psd(m, tau):
    """Proximal map of ``tau * nuclear norm`` restricted to the PSD cone.

    Eigenvalues above ``tau`` are shifted down by ``tau``, everything else
    is dropped, so the result is PSD for any symmetric input.

    Parameters
    ----------
    m : (p, p) ndarray
        Exactly symmetric.
    tau : float
        Threshold, >= 0.

    Returns
    -------
    (p, p) ndarray, PSD.
    """
    return _psd_soft(m, _check_tau(tau))[0]


def soft_threshold_sym(m, tau):
    """Eigenvalue soft-threshold of a symmetric matrix, sign preserved.

    Shrinks each eigenvalue toward zero by ``tau``. This is the symmetric
    form of singular-value soft-thresholding, the minimizer of
    ``tau*||X||_* + 0.5*||X - m||_F^2`` over symmetric X.
    """
    return _sym_soft(m, _check_tau(tau))[0]


def best_rank_r(m, r):
    """Best Frobenius rank-r approximation of a symmetric matrix.

    Keeps the ``r`` eigenvalues of largest magnitude together with their
    eigenvectors.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"best_rank_r: expected a square matrix, got shape {m.shape}")
    return _rank(m, _check_rank(r, m.shape[0]))[0]


def best_rank_r_psd(m, r):
    """Closest PSD matrix of rank at most r, in Frobenius norm.

    Keeps the ``r`` algebraically largest eigenvalues and clips them at
    zero, e.g. diag(3, -5, 1) with r=2 maps to diag(3, 0, 1).
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"best_rank_r_psd: expected a square matrix, got shape {m.shape}")
    return _rank_psd(m, _check_rank(r, m.shape[0]))[0]


def _prox_with_spectrum(spec, m):
    """Apply ``spec`` to ``m``; also return the kept eigenvalues of the output."""
    if spec.kind == "psd_soft":
        return _psd_soft(m, spec.tau)
    if spec.kind == "sym_soft":
        return _sym_soft(m, spec.tau)
    if spec.kind == "rank":
        return _rank(m, _check_rank(spec.r, m.shape[0]))
    return _rank_psd(m, _check_rank(spec.r, m.shape[0]))


def apply_prox(spec, m):
    """Apply the operator described by a :class:`ProxSpec` to ``m``."""
    if not isinstance(spec, ProxSpec):
        raise ValueError("apply_prox: spec must be a ProxSpec")
    return _prox_with_spectrum(spec, np.asarray(m, dtype=float))[0]
