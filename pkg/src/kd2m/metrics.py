"""Distribution metrics between student and teacher feature batches.

Empirical metrics (``w2_e``, ``cw2_e``, ``jw2_e``) go through an OT plan and
return squared distances; their gradients hold the plan fixed (envelope
rule). Gaussian metrics (``w2_g``, ``cw2_g``, ``kl_g``) use the closed forms
and, in diagonal mode, differentiate through the fitted mean and standard
deviation back to the student features.
"""

from dataclasses import dataclass, field

import numpy as np

from . import ot
from .errors import ConditioningError, ConfigError, DegenerateBatchError, InputError, ShapeError
from .linalg import bures, logdet_inv_psd

DEFAULT_RIDGE = 1e-4
FEATURE_METRICS = ("w2_e", "cw2_e", "jw2_e", "w2_g", "cw2_g", "kl_g")


@dataclass
class LabeledBatch:
    Z: np.ndarray
    y: np.ndarray | None = None
    logits: np.ndarray | None = None

    def __post_init__(self):
        self.Z = np.atleast_2d(np.asarray(self.Z, dtype=np.float64))
        n = self.Z.shape[0]
        if n < 1:
            raise ShapeError("batch must contain at least one point")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.int64)
            if self.y.shape != (n,):
                raise ShapeError(f"labels shape {self.y.shape} does not match {n} points")
            if np.any(self.y < 0):
                raise InputError("labels must be non-negative")
        if self.logits is not None:
            self.logits = np.atleast_2d(np.asarray(self.logits, dtype=np.float64))
            if self.logits.shape[0] != n:
                raise ShapeError("logits must have one row per point")

    def subset(self, mask) -> "LabeledBatch":
        return LabeledBatch(
            self.Z[mask],
            None if self.y is None else self.y[mask],
            None if self.logits is None else self.logits[mask],
        )


@dataclass
class GaussianParams:
    mean: np.ndarray
    cov_mode: str
    sigma_diag: np.ndarray | None = None
    cov: np.ndarray | None = None
    ridge: float = DEFAULT_RIDGE
    # the fitted sample, kept so diagonal-mode gradients can reach it
    sample: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def covariance(self) -> np.ndarray:
        return np.diag(self.sigma_diag**2) if self.cov_mode == "diagonal" else self.cov


@dataclass
class MetricResult:
    value: float
    grad_ZS: np.ndarray | None = None
    detail: dict = field(default_factory=dict)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_dims(S: LabeledBatch, T: LabeledBatch):
    if S.Z.shape[1] != T.Z.shape[1]:
        raise ShapeError(f"feature dimension mismatch: {S.Z.shape[1]} vs {T.Z.shape[1]}")


def _plan_metric(ZS, ZT, C, solver) -> MetricResult:
    plan = ot.solve(ot.uniform(len(ZS)), ot.uniform(len(ZT)), C, solver)
    gamma = plan.gamma
    # d/dz_i sum_j gamma_ij |z_i - w_j|^2 with gamma frozen
    grad = 2.0 * (gamma.sum(axis=1)[:, None] * ZS - gamma @ ZT)
    return MetricResult(plan.cost, grad, {"solver": plan.solver_tag, "plan": gamma})


def w2_empirical(S: LabeledBatch, T: LabeledBatch, solver: ot.SolverConfig | None = None) -> MetricResult:
    """Squared 2-Wasserstein distance between the two empirical clouds."""
    _check_dims(S, T)
    return _plan_metric(S.Z, T.Z, ot.cost_matrix(S.Z, T.Z), solver)


def _common_classes(S, T, min_count=1):
    if S.y is None or T.y is None:
        raise ConfigError("class-conditional metric needs labels on both batches")
    cs, ns = np.unique(S.y, return_counts=True)
    ct, nt = np.unique(T.y, return_counts=True)
    ok_s = set(cs[ns >= min_count].tolist())
    ok_t = set(ct[nt >= min_count].tolist())
    used = sorted(ok_s & ok_t)
    skipped = sorted((set(cs.tolist()) | set(ct.tolist())) - set(used))
    return used, skipped


def cw2_empirical(S: LabeledBatch, T: LabeledBatch, solver: ot.SolverConfig | None = None) -> MetricResult:
    """Mean over shared classes of the per-class squared W2."""
    _check_dims(S, T)
    used, skipped = _common_classes(S, T)
    if not used:
        raise DegenerateBatchError("no class is present in both batches")
    grad = np.zeros_like(S.Z)
    per_class = {}
    total = 0.0
    for c in used:
        ms, mt = S.y == c, T.y == c
        r = w2_empirical(S.subset(ms), T.subset(mt), solver)
        per_class[c] = r.value
        total += r.value
        grad[ms] += r.grad_ZS / len(used)
    return MetricResult(total / len(used), grad, {"per_class": per_class, "skipped": skipped})


def jw2_empirical(S: LabeledBatch, T: LabeledBatch, beta: float = 1.0,
                  solver: ot.SolverConfig | None = None) -> MetricResult:
    """Joint feature/label W2 with label cost ``beta * |softmax(s) - softmax(t)|^2``.

    The gradient covers only the feature part of the cost; the logits are
    treated as constants.
    """
    _check_dims(S, T)
    if S.logits is None or T.logits is None:
        raise ConfigError("jw2_e needs logits on both batches")
    if beta < 0:
        raise InputError("beta must be non-negative")
    C = ot.cost_matrix(S.Z, T.Z) + beta * ot.cost_matrix(softmax(S.logits), softmax(T.logits))
    return _plan_metric(S.Z, T.Z, C, solver)


def fit_gaussian(Z, mode: str = "diagonal", ridge: float = DEFAULT_RIDGE) -> GaussianParams:
    """Maximum-likelihood Gaussian (biased covariance) plus ``ridge * I``."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Z.shape[0] < 2:
        raise DegenerateBatchError(f"need at least 2 samples to fit a Gaussian, got {Z.shape[0]}")
    if ridge <= 0:
        raise InputError("ridge must be positive")
    mu = Z.mean(axis=0)
    centered = Z - mu
    if mode == "diagonal":
        var = np.mean(centered**2, axis=0) + ridge
        return GaussianParams(mu, "diagonal", sigma_diag=np.sqrt(var), ridge=ridge, sample=Z)
    if mode == "full":
        cov = centered.T @ centered / Z.shape[0] + ridge * np.eye(Z.shape[1])
        return GaussianParams(mu, "full", cov=0.5 * (cov + cov.T), ridge=ridge, sample=Z)
    raise ConfigError(f"unknown covariance mode {mode!r}")


def _check_pair(gS: GaussianParams, gT: GaussianParams):
    if gS.cov_mode != gT.cov_mode:
        raise ConfigError(f"covariance mode mismatch: {gS.cov_mode} vs {gT.cov_mode}")
    if gS.dim != gT.dim:
        raise ShapeError(f"dimension mismatch: {gS.dim} vs {gT.dim}")


def _diag_backprop(g: GaussianParams, dmu, dsigma):
    if g.sample is None:
        return None
    Z = g.sample
    n = Z.shape[0]
    # dmu_k/dZ_ik = 1/n ; dsigma_k/dZ_ik = (Z_ik - mu_k) / (n sigma_k)
    return dmu[None, :] / n + (Z - g.mean) * (dsigma / (n * g.sigma_diag))[None, :]


def w2_gaussian(gS: GaussianParams, gT: GaussianParams) -> MetricResult:
    """Closed-form squared W2 between Gaussians (mean term + Bures term)."""
    _check_pair(gS, gT)
    dmu = gS.mean - gT.mean
    if gS.cov_mode == "full":
        return MetricResult(float(dmu @ dmu) + bures(gS.cov, gT.cov))
    dsig = gS.sigma_diag - gT.sigma_diag
    value = float(dmu @ dmu) + float(dsig @ dsig)
    return MetricResult(value, _diag_backprop(gS, 2.0 * dmu, 2.0 * dsig))


def kl_gaussian(gS: GaussianParams, gT: GaussianParams) -> MetricResult:
    """KL(P_S | P_T) between Gaussians."""
    _check_pair(gS, gT)
    d = gS.dim
    delta = gT.mean - gS.mean
    if gS.cov_mode == "full":
        if np.array_equal(gS.mean, gT.mean) and np.array_equal(gS.cov, gT.cov):
            return MetricResult(0.0)
        logdet_t, inv_t = logdet_inv_psd(gT.cov)
        logdet_s, _ = logdet_inv_psd(gS.cov)
        value = 0.5 * (np.trace(inv_t @ gS.cov) + delta @ inv_t @ delta - d + logdet_t - logdet_s)
        return MetricResult(max(float(value), 0.0))
    sS, sT = gS.sigma_diag, gT.sigma_diag
    if np.any(sT <= 0) or np.any(sS <= 0):
        raise ConditioningError("non-positive standard deviation; increase the ridge")
    ratio = sS / sT
    value = 0.5 * (np.sum(ratio**2) + np.sum((delta / sT) ** 2) - d + 2.0 * np.sum(np.log(sT / sS)))
    dmu = -delta / sT**2
    dsigma = sS / sT**2 - 1.0 / sS
    return MetricResult(max(float(value), 0.0), _diag_backprop(gS, dmu, dsigma))


def cw2_gaussian(S: LabeledBatch, T: LabeledBatch, mode: str = "diagonal",
                 ridge: float = DEFAULT_RIDGE) -> MetricResult:
    """Mean over shared classes (>= 2 samples each side) of per-class Gaussian W2."""
    _check_dims(S, T)
    used, skipped = _common_classes(S, T, min_count=2)
    if not used:
        raise DegenerateBatchError("no class has at least 2 samples in both batches")
    grad = np.zeros_like(S.Z) if mode == "diagonal" else None
    per_class = {}
    total = 0.0
    for c in used:
        ms, mt = S.y == c, T.y == c
        r = w2_gaussian(fit_gaussian(S.Z[ms], mode, ridge), fit_gaussian(T.Z[mt], mode, ridge))
        per_class[c] = r.value
        total += r.value
        if grad is not None:
            grad[ms] += r.grad_ZS / len(used)
    return MetricResult(total / len(used), grad, {"per_class": per_class, "skipped": skipped})


def distribution_distance(name: str, S: LabeledBatch, T: LabeledBatch, *, beta: float = 1.0,
                          solver: ot.SolverConfig | None = None, gaussian_mode: str = "diagonal",
                          ridge: float = DEFAULT_RIDGE) -> MetricResult:
    """Dispatch on a metric name from :data:`FEATURE_METRICS`."""
    if name == "w2_e":
        return w2_empirical(S, T, solver)
    if name == "cw2_e":
        return cw2_empirical(S, T, solver)
    if name == "jw2_e":
        return jw2_empirical(S, T, beta, solver)
    if name == "w2_g":
        return w2_gaussian(fit_gaussian(S.Z, gaussian_mode, ridge), fit_gaussian(T.Z, gaussian_mode, ridge))
    if name == "cw2_g":
        return cw2_gaussian(S, T, gaussian_mode, ridge)
    if name == "kl_g":
        return kl_gaussian(fit_gaussian(S.Z, gaussian_mode, ridge), fit_gaussian(T.Z, gaussian_mode, ridge))
    raise ConfigError(f"unknown metric {name!r}; valid names: {', '.join(FEATURE_METRICS)}")
