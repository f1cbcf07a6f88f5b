"""Seeded synthetic instances and the Monte-Carlo sweep runner.

An instance is a planted low-rank signal observed through heteroskedastic
noise: Y = M + Z with M of rank r and Z row-scaled Gaussian. Solvers are
scored by the sin-theta distance between their leading-r subspace and the
planted one. Everything is driven by one PCG64 stream per replicate so a
(config, seed) pair reproduces its rows exactly.
"""

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .matcore import symmetrize
from .metrics import ledermann_bound, sin_theta
from .solvers import (
    deflated_heteropca,
    diag_deleted_pca,
    extract_subspace,
    heteropca,
    heteropca_psd,
    pca_baseline,
    rmtfa,
    soft_impute_diag,
)

__all__ = [
    "ModelParams",
    "Instance",
    "ResultRow",
    "ExperimentConfig",
    "METHOD_TAGS",
    "gen_signal",
    "gen_noise",
    "gen_instance",
    "gen_masked",
    "resolve_tau",
    "run_experiment",
]

METHOD_TAGS = ("svd", "dd", "hpca", "dhpca", "hpca_plus", "rmtfa", "si")

VARY_PARAMS = ("n", "p", "r", "kappa", "omega")


@dataclass(frozen=True)
class ModelParams:
    """Shape of one synthetic instance.

    n samples, p variables, planted rank r, spectrum condition number
    kappa >= 1 and noise-scale ceiling omega >= 0. The signal spectrum is
    pinned at ``sigma_r = (n*p)**0.25 + sqrt(p)`` with the remaining
    values log-spaced up to ``kappa * sigma_r``.
    """

    n: int
    p: int
    r: int
    kappa: float = 1.0
    omega: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n", "p", "r"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"ModelParams: {name} must be an integer >= 1, got {v}")
            object.__setattr__(self, name, int(v))
        if self.r > min(self.n, self.p):
            raise ValueError(
                f"ModelParams: r = {self.r} exceeds min(n, p) = {min(self.n, self.p)}"
            )
        if not np.isfinite(self.kappa) or self.kappa < 1.0:
            raise ValueError(f"ModelParams: kappa must be >= 1, got {self.kappa}")
        if self.r == 1 and self.kappa != 1.0:
            raise ValueError("ModelParams: r = 1 admits no spread, kappa must be 1")
        if not np.isfinite(self.omega) or self.omega <= 0.0:
            raise ValueError(f"ModelParams: omega must be > 0, got {self.omega}")
        if int(self.seed) != self.seed:
            raise ValueError(f"ModelParams: seed must be an integer, got {self.seed}")
        object.__setattr__(self, "seed", int(self.seed))
        if self.r > ledermann_bound(self.p):
            warnings.warn(
                f"r = {self.r} exceeds the identifiability bound "
                f"{ledermann_bound(self.p):.6g} at p = {self.p}",
                stacklevel=2,
            )

    def sigma_r(self):
        """Smallest planted singular value, fixed by (n, p)."""
        return (self.n * self.p) ** 0.25 + self.p**0.5


@dataclass(frozen=True)
class Instance:
    """One drawn instance: signal M, noise Z, data Y = M + Z, sigma = Y Y^T."""

    params: ModelParams
    M: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    sigma: np.ndarray
    u_true: np.ndarray
    svals: np.ndarray


@dataclass(frozen=True)
class ResultRow:
    """One scored (method, sweep value, replicate) cell.

    ``param`` names the varied model parameter and ``value`` its setting.
    ``sin_theta`` is NaN when ``status`` records a solver error.
    """

    method: str
    param: str
    value: float
    replicate: int
    sin_theta: float
    wall_ms: float
    status: str


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative sweep: a base model, one varied parameter, methods, seeds."""

    n: int
    p: int
    r: int
    vary_param: str
    vary_values: tuple
    kappa: float = 1.0
    omega: float = 1.0
    methods: tuple = METHOD_TAGS
    replicates: int = 10
    seed: int = 0
    tau_rule: object = "sigma_r_sq_over_16"

    def __post_init__(self):
        if self.vary_param not in VARY_PARAMS:
            raise ValueError(
                f"ExperimentConfig: vary_param must be one of {VARY_PARAMS}, got {self.vary_param!r}"
            )
        values = tuple(self.vary_values)
        if not values:
            raise ValueError("ExperimentConfig: vary_values must be non-empty")
        object.__setattr__(self, "vary_values", values)
        methods = tuple(self.methods)
        if not methods:
            raise ValueError("ExperimentConfig: methods must be non-empty")
        for m in methods:
            if m not in METHOD_TAGS:
                raise ValueError(f"ExperimentConfig: unknown method {m!r}")
        if len(set(methods)) != len(methods):
            raise ValueError("ExperimentConfig: duplicate method tags")
        object.__setattr__(self, "methods", methods)
        if int(self.replicates) != self.replicates or self.replicates < 1:
            raise ValueError(
                f"ExperimentConfig: replicates must be an integer >= 1, got {self.replicates}"
            )
        object.__setattr__(self, "replicates", int(self.replicates))
        if int(self.seed) != self.seed:
            raise ValueError(f"ExperimentConfig: seed must be an integer, got {self.seed}")
        object.__setattr__(self, "seed", int(self.seed))
        if isinstance(self.tau_rule, str):
            if self.tau_rule != "sigma_r_sq_over_16":
                raise ValueError(f"ExperimentConfig: unknown tau_rule {self.tau_rule!r}")
        else:
            t = float(self.tau_rule)
            if not np.isfinite(t) or t <= 0:
                raise ValueError(f"ExperimentConfig: numeric tau_rule must be > 0, got {t}")
            object.__setattr__(self, "tau_rule", t)
        # every swept setting must give a valid model; fail before running
        for v in values:
            self.model_at(v)

    def model_at(self, value, replicate=0):
        """ModelParams for one sweep value and replicate index."""
        base = dict(n=self.n, p=self.p, r=self.r, kappa=self.kappa, omega=self.omega)
        if self.vary_param in ("n", "p", "r"):
            if int(value) != value:
                raise ValueError(
                    f"ExperimentConfig: {self.vary_param} takes integers, got {value!r}"
                )
            base[self.vary_param] = int(value)
        else:
            base[self.vary_param] = float(value)
        return ModelParams(seed=self.seed + replicate, **base)


def gen_signal(params, rng):
    """Draw the planted low-rank signal.

    The singular bases come from a p x n standard Gaussian draw and the
    spectrum is set to ``sigma_{r-i} = kappa**(i/(r-1)) * sigma_r``, so the
    largest-to-smallest ratio is exactly kappa.

    Returns
    -------
    (M, U, svals) : (p, n) signal, (p, r) left basis, descending spectrum.
    """
    if not isinstance(params, ModelParams):
        raise ValueError("gen_signal: params must be ModelParams")
    p, n, r = params.p, params.n, params.r
    raw = rng.standard_normal((p, n))
    u, _, vh = np.linalg.svd(raw, full_matrices=False)
    U = u[:, :r]
    V = vh[:r].T
    # deterministic orientation, matching the eigensolver's convention
    lead = np.argmax(np.abs(U), axis=0)
    flip = U[lead, np.arange(r)] < 0.0
    U[:, flip] *= -1.0
    V[:, flip] *= -1.0
    s_r = params.sigma_r()
    if r == 1:
        svals = np.array([s_r])
    else:
        expo = np.arange(r - 1, -1, -1) / (r - 1)
        svals = params.kappa**expo * s_r
    M = (U * svals) @ V.T
    return M, U, svals


def gen_noise(params, rng):
    """Heteroskedastic noise: row i is N(0, w_i^2) with w_i ~ U[0, omega]."""
    if not isinstance(params, ModelParams):
        raise ValueError("gen_noise: params must be ModelParams")
    scales = rng.uniform(0.0, params.omega, params.p)
    return scales[:, None] * rng.standard_normal((params.p, params.n))


def gen_instance(params):
    """Draw a full instance from ``params.seed`` (signal first, then noise)."""
    rng = np.random.default_rng(params.seed)
    M, U, svals = gen_signal(params, rng)
    Z = gen_noise(params, rng)
    Y = M + Z
    sigma = symmetrize(Y @ Y.T)
    return Instance(params=params, M=M, Z=Z, Y=Y, sigma=sigma, u_true=U, svals=svals)


def gen_masked(y, theta, rng):
    """Zero out entries of ``y`` independently with probability ``theta``.

    Returns
    -------
    (masked, observed) : the masked copy and the boolean keep-mask.
    """
    y = np.asarray(y, dtype=float)
    theta = float(theta)
    if not 0.0 < theta < 1.0:
        raise ValueError(f"gen_masked: theta must lie in (0, 1), got {theta}")
    observed = rng.uniform(size=y.shape) >= theta
    masked = np.where(observed, y, 0.0)
    return masked, observed


def resolve_tau(config, params):
    """Shrinkage level for one model: the named rule or an explicit number."""
    if isinstance(config.tau_rule, str):
        return params.sigma_r() ** 2 / 16.0
    return float(config.tau_rule)


def _fit_basis(method, inst, tau):
    r = inst.params.r
    sigma = inst.sigma
    if method == "svd":
        return pca_baseline(sigma, r)
    if method == "dd":
        return extract_subspace(diag_deleted_pca(sigma, r), r)
    if method == "hpca":
        L, _ = heteropca(sigma, r)
        return extract_subspace(L, r)
    if method == "dhpca":
        return extract_subspace(deflated_heteropca(sigma, r), r)
    if method == "hpca_plus":
        L, _ = heteropca_psd(sigma, r)
        return extract_subspace(L, r)
    if method == "rmtfa":
        dec, _ = rmtfa(sigma, tau)
        return extract_subspace(dec, r)
    if method == "si":
        dec, _ = soft_impute_diag(sigma, tau)
        return extract_subspace(dec, r)
    raise ValueError(f"unknown method {method!r}")


def _run_cell(config, value, replicate):
    inst = gen_instance(config.model_at(value, replicate))
    tau = resolve_tau(config, inst.params)
    rows = []
    for method in config.methods:
        t0 = time.perf_counter()
        try:
            basis = _fit_basis(method, inst, tau)
            score = sin_theta(basis, inst.u_true)
            status = "ok"
        except Exception as exc:  # a failed solver must not sink the sweep
            score = float("nan")
            status = f"error: {exc}"
        wall_ms = (time.perf_counter() - t0) * 1000.0
        rows.append(
            ResultRow(
                method=method,
                param=config.vary_param,
                value=float(value),
                replicate=replicate,
                sin_theta=score,
                wall_ms=wall_ms,
                status=status,
            )
        )
    return rows


def run_experiment(config, jobs=1):
    """Score every (sweep value, replicate, method) cell of a config.

    Replicate k draws its instance from ``config.seed + k``, so rows are
    reproducible for a fixed config regardless of ``jobs``. Rows are
    ordered by sweep value, then replicate, then method.

    Parameters
    ----------
    config : ExperimentConfig
    jobs : int
        Worker threads; 1 runs serially.

    Returns
    -------
    list[ResultRow]
    """
    if not isinstance(config, ExperimentConfig):
        raise ValueError("run_experiment: config must be an ExperimentConfig")
    if int(jobs) != jobs or jobs < 1:
        raise ValueError(f"run_experiment: jobs must be an integer >= 1, got {jobs}")
    jobs = int(jobs)
    cells = [(v, k) for v in config.vary_values for k in range(config.replicates)]
    if jobs == 1:
        per_cell = [_run_cell(config, v, k) for v, k in cells]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_cell = list(pool.map(lambda c: _run_cell(config, *c), cells))
    return [row for rows in per_cell for row in rows]
