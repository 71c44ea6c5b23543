"""Inverse-probability-weighted estimators of average potential outcomes."""

from __future__ import annotations

import dataclasses
import logging
import math
from typing import List, NamedTuple, Optional

import numpy as np
import statsmodels.api as sm
from scipy import stats

from .exposure import Partition, ReplicateFeatures, inclusion_prob, membership

__all__ = [
    "DegenerateDesignError",
    "EmptyMembershipError",
    "Estimate",
    "ExposureCondition",
    "WLSResult",
    "four_condition_baseline",
    "gate",
    "hajek",
    "hajek_variance",
    "horvitz_thompson",
    "sutva_difference",
    "weighted_ls",
    "wsse",
]

logger = logging.getLogger(__name__)


class EmptyMembershipError(ValueError):
    """An estimator was asked for the mean of an empty set of observations."""


class DegenerateDesignError(ValueError):
    """The weighted regression design matrix is rank deficient."""


@dataclasses.dataclass(frozen=True)
class Estimate:
    """A point estimate with its standard error.

    Parameters
    ----------
    value : float
    std_error : float
    n_members : int
        Number of observations the estimate is computed from.
    effective_weight : float
        Sum of the inverse-probability weights of those observations.
    """

    value: float
    std_error: float
    n_members: int
    effective_weight: float

    def interval(self, level: float = 0.95):
        """Normal-approximation confidence interval ``value +/- z * std_error``."""
        if not 0.0 < level < 1.0:
            raise ValueError(f"level must be in (0, 1), got {level!r}")
        half = stats.norm.ppf(0.5 + level / 2) * self.std_error
        return self.value - half, self.value + half

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _prepare(y, members, pi_hat):
    y = np.asarray(y, dtype=np.float64)
    pi_hat = np.asarray(pi_hat, dtype=np.float64)
    if y.shape != pi_hat.shape:
        raise ValueError(
            f"outcomes have shape {y.shape} but probabilities have shape {pi_hat.shape}"
        )
    if members is None:
        members = np.ones(y.shape, dtype=bool)
    members = np.asarray(members, dtype=bool)
    if members.shape != y.shape:
        raise ValueError(
            f"membership has shape {members.shape} but outcomes have shape {y.shape}"
        )
    return y[members], 1.0 / pi_hat[members]


def hajek(y, members, pi_hat) -> Estimate:
    """Self-normalized inverse-probability-weighted mean of the members.

    Parameters
    ----------
    y : array_like
        Outcomes.
    members : array_like of bool or None
        Which observations belong to the exposure condition; None for all.
    pi_hat : array_like
        Inclusion probabilities of the observations in the condition.

    Example
    -------
    >>> hajek([1.0, 2.0], None, [0.25, 0.5]).value
    1.3333333333333333
    """
    y_m, w = _prepare(y, members, pi_hat)
    if len(y_m) == 0:
        raise EmptyMembershipError("Hajek estimate of an empty exposure condition")
    total = w.sum()
    value = float(np.dot(w, y_m) / total)
    variance = float(np.sum(w**2 * (y_m - value) ** 2) / total**2)
    return Estimate(value, math.sqrt(variance), len(y_m), float(total))


def hajek_variance(y, members, pi_hat, value: float) -> float:
    """Linearized variance ``sum w^2 (y - value)^2 / (sum w)^2``, ``w = 1 / pi``."""
    y_m, w = _prepare(y, members, pi_hat)
    if len(y_m) == 0:
        raise EmptyMembershipError("Hajek variance of an empty exposure condition")
    return float(np.sum(w**2 * (y_m - value) ** 2) / w.sum() ** 2)


def horvitz_thompson(y, members, pi_hat, universe_size: int) -> Estimate:
    """Horvitz-Thompson mean ``sum_members (y / pi) / |U|``.

    The standard error ignores joint inclusion probabilities. An empty membership
    gives a zero estimate.
    """
    if universe_size < 1:
        raise ValueError(f"universe_size must be positive, got {universe_size}")
    y_m, w = _prepare(y, members, pi_hat)
    value = float(np.dot(w, y_m) / universe_size)
    variance = float(np.sum((1.0 - 1.0 / w) * w**2 * y_m**2) / universe_size**2)
    return Estimate(value, math.sqrt(max(variance, 0.0)), len(y_m), float(w.sum()))


def wsse(y, members, pi_hat, value: float) -> float:
    """Weighted sum of squared errors ``sum w (y - value)^2``."""
    y_m, w = _prepare(y, members, pi_hat)
    if len(y_m) == 0:
        raise EmptyMembershipError("WSSE of an empty exposure condition")
    return float(np.dot(w, (y_m - value) ** 2))


class WLSResult(NamedTuple):
    """Weighted least squares fit with HC0 (sandwich) standard errors."""

    coef: np.ndarray
    std_errors: np.ndarray
    residuals: np.ndarray
    wsse: float
    n_members: int
    effective_weight: float

    @property
    def intercept(self) -> Estimate:
        return Estimate(
            float(self.coef[0]),
            float(self.std_errors[0]),
            self.n_members,
            self.effective_weight,
        )

    @property
    def slope(self) -> Estimate:
        if len(self.coef) < 2:
            raise ValueError("constant-only regression has no slope")
        return Estimate(
            float(self.coef[1]),
            float(self.std_errors[1]),
            self.n_members,
            self.effective_weight,
        )


def weighted_ls(y, members, weights, z=None) -> WLSResult:
    """Weighted regression of `y` on a constant, or on a constant and `z`.

    The constant-only coefficient is the Hajek mean; with `z` the second coefficient
    is the treated-minus-control contrast.

    Raises
    ------
    DegenerateDesignError
        If there are no members or, with `z`, the members do not include both
        treatment values.
    """
    y = np.asarray(y, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    members = (
        np.ones(y.shape, dtype=bool) if members is None else np.asarray(members, bool)
    )
    y_m = y[members]
    w = weights[members]
    columns = [np.ones(len(y_m))]
    if z is not None:
        columns.append(np.asarray(z, dtype=np.float64)[members])
    X = np.column_stack(columns)
    if len(y_m) == 0 or np.linalg.matrix_rank(X) < X.shape[1]:
        raise DegenerateDesignError(
            f"design with {X.shape[1]} regressors is rank deficient on "
            f"{len(y_m)} members"
        )
    fitted = sm.WLS(y_m, X, weights=w).fit(cov_type="HC0")
    resid = np.asarray(fitted.resid)
    return WLSResult(
        np.asarray(fitted.params),
        np.asarray(fitted.bse),
        resid,
        float(np.dot(w, resid**2)),
        len(y_m),
        float(w.sum()),
    )


def gate(tree) -> Estimate:
    """Global average treatment effect read from an estimated exposure tree.

    The all-treated corner (treated ego, every fully-treated feature 1, the rest 0)
    and the all-control corner are routed down the tree; the effect is the
    difference of the two leaf estimates, with the leaves treated as independent.

    Raises
    ------
    ValueError
        If both corners land in the same leaf or a corner leaf has no estimate.
    """
    treated = tree.corner_leaf(treated=True)
    control = tree.corner_leaf(treated=False)
    if treated is control:
        raise ValueError(
            f"treated and control corners share leaf {treated.name}; "
            "the tree does not separate them"
        )
    for leaf in (treated, control):
        if leaf.estimate is None:
            raise ValueError(f"corner leaf {leaf.name} has no estimation members")
    e1, e0 = treated.estimate, control.estimate
    return Estimate(
        e1.value - e0.value,
        math.hypot(e1.std_error, e0.std_error),
        e1.n_members + e0.n_members,
        e1.effective_weight + e0.effective_weight,
    )


def sutva_difference(y, z) -> Estimate:
    """Treated-minus-control difference in means with the Neyman standard error."""
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z).astype(bool)
    y1, y0 = y[z], y[~z]
    if len(y1) < 2 or len(y0) < 2:
        raise EmptyMembershipError(
            "difference in means needs at least two treated and two control units"
        )
    se = math.sqrt(y1.var(ddof=1) / len(y1) + y0.var(ddof=1) / len(y0))
    return Estimate(float(y1.mean() - y0.mean()), se, len(y), float(len(y)))


class ExposureCondition(NamedTuple):
    name: str
    partition: Partition
    estimate: Optional[Estimate]
    share: float


def four_condition_baseline(y, F, repl: ReplicateFeatures) -> List[ExposureCondition]:
    """Hajek means of the four classic exposure conditions.

    The conditions cross the ego's assignment with whether any neighbor is treated
    (the dyad feature ``2-1`` is positive): no exposure, direct only, indirect only,
    and direct + indirect. `F` is the observed feature matrix aligned with `y` and
    with the rows of `repl`. A condition nobody lands in has no estimate.
    """
    if tuple(F.columns) != tuple(repl.columns):
        raise ValueError("observed features and replicate tensor have different columns")
    if not np.array_equal(F.nodes, repl.nodes):
        raise ValueError("observed features and replicate tensor cover different nodes")
    treated_nbr = F.columns.index("2-1")
    conditions = [
        ("no exposure", ("le", "le")),
        ("direct", ("gt", "le")),
        ("indirect", ("le", "gt")),
        ("direct + indirect", ("gt", "gt")),
    ]
    observed = repl.encode(F.values)
    out = []
    for name, (z_side, nbr_side) in conditions:
        part = Partition().refine(0, 0.0, z_side).refine(treated_nbr, 0.0, nbr_side)
        members = membership(observed, part, repl.scale)
        share = float(members.mean()) if len(members) else 0.0
        if members.any():
            estimate = hajek(y, members, inclusion_prob(repl, part))
        else:
            estimate = None
        out.append(ExposureCondition(name, part, estimate, share))
        logger.debug("four-condition baseline: %s share %.3f", name, share)
    return out
