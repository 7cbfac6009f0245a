"""Numerical checks of the Wasserstein risk bounds for distillation.

For encoders ``g_S, g_T`` and a sample ``X``, the push-forward clouds
``g_S(X)`` and ``g_T(X)`` can always be coupled index-by-index, so

    W2(g_S # P, g_T # P) <= ||g_S - g_T||_{L2(P)}

holds for every empirical measure. :func:`check_theorem1` measures both
sides with the exact OT solver. :func:`risk_gap_report` only *reports* the
risk gap next to W2: the kernel conditions behind that bound cannot be
checked numerically.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import ot
from .data import Dataset, make_rng
from .errors import ShapeError
from .metrics import softmax
from .nn import MlpModel, MlpParams, forward

THEOREM_SLACK = 1e-7
MAX_EXACT_POINTS = 500


@dataclass
class BoundReport:
    w2: float
    l2_encoders: float
    diag_coupling_cost: float
    holds_theorem1: bool
    slack: float
    n: int
    risk_S: float | None = None
    risk_T: float | None = None
    risk_gap: float | None = None
    risk_gap_exceeds_w2: bool | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def features(g, X) -> np.ndarray:
    """Evaluate an encoder given as an MlpModel, MlpParams or plain callable."""
    if isinstance(g, MlpModel):
        return g.features(X)
    if isinstance(g, MlpParams):
        return forward(g, X).output
    return np.atleast_2d(np.asarray(g(X), dtype=np.float64))


def _pair(gS, gT, X):
    ZS, ZT = features(gS, X), features(gT, X)
    if ZS.shape != ZT.shape:
        raise ShapeError(f"encoders disagree on output shape: {ZS.shape} vs {ZT.shape}")
    return ZS, ZT


def encoder_l2_distance(gS, gT, X) -> float:
    """Empirical ``L2(P)`` distance ``sqrt(mean_i |g_S(x_i) - g_T(x_i)|^2)``."""
    ZS, ZT = _pair(gS, gT, X)
    diff = ZS - ZT
    return float(np.sqrt(np.mean(np.einsum("ij,ij->i", diff, diff))))


def check_theorem1(gS, gT, X) -> BoundReport:
    """Compare exact W2 of the push-forwards with the encoder L2 distance.

    ``diag_coupling_cost`` is the transport cost of the plan pairing each
    sample with itself; it equals ``l2_encoders ** 2`` by construction.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[0]
    if n > MAX_EXACT_POINTS:
        raise ShapeError(f"exact check limited to {MAX_EXACT_POINTS} points, got {n}")
    ZS, ZT = _pair(gS, gT, X)
    C = ot.cost_matrix(ZS, ZT)
    plan = ot.solve_exact(ot.uniform(n), ot.uniform(n), C)
    w2 = float(np.sqrt(plan.cost))
    l2 = encoder_l2_distance(gS, gT, X)
    diag_cost = float(np.sum(np.diag(C) / n))
    return BoundReport(w2, l2, diag_cost, w2 <= l2 + THEOREM_SLACK, l2 - w2, n)


def _risk(head, Z, y) -> float:
    if isinstance(head, MlpModel):
        head = head.head
    # |h(z) - h0(z)| realized as 1 - p_h(true class | z), bounded in [0, 1]
    p = softmax(features(head, Z))
    return float(np.mean(1.0 - p[np.arange(len(y)), y]))


def probe_indices(n: int, max_points: int = MAX_EXACT_POINTS, seed: int = 0) -> np.ndarray:
    if n <= max_points:
        return np.arange(n)
    return np.sort(make_rng(seed, "probe").choice(n, size=max_points, replace=False))


def risk_gap_report(head, gS, gT, dataset: Dataset, max_points: int = MAX_EXACT_POINTS,
                    seed: int = 0) -> BoundReport:
    """Risks of one shared head on both feature clouds, next to W2 and the L2 bound.

    At most ``max_points`` rows (a seeded subsample) enter the exact OT.
    ``risk_gap_exceeds_w2`` flags ``risk_gap > w2`` for inspection; it is not an
    error.
    """
    idx = probe_indices(len(dataset), max_points, seed)
    X, y = dataset.X[idx], dataset.y[idx]
    report = check_theorem1(gS, gT, X)
    ZS, ZT = _pair(gS, gT, X)
    report.risk_S = _risk(head, ZS, y)
    report.risk_T = _risk(head, ZT, y)
    report.risk_gap = abs(report.risk_S - report.risk_T)
    report.risk_gap_exceeds_w2 = report.risk_gap > report.w2
    return report


def probe_w2(student: MlpModel, teacher: MlpModel, X) -> float:
    """Exact W2 between student and teacher features on a probe batch."""
    ZS, ZT = _pair(student, teacher, X)
    n = ZS.shape[0]
    return float(np.sqrt(ot.solve_exact(ot.uniform(n), ot.uniform(n), ot.cost_matrix(ZS, ZT)).cost))
