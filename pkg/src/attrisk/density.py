"""Log-density kernels and the three quantities fed to the risk estimator.

All functions broadcast over a leading draw axis ``H`` and a trailing
record (or grid-cell) axis. Linear predictors are accumulated column by
column rather than through a BLAS product so that the same inputs always
round the same way regardless of array shape; ``log_f`` at the truth and
``log_f_star`` are therefore bit-identical.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import DomainError
from .schema import Dataset, ValidatedPlan

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def linear_predictor(X: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """``X @ beta.T`` for ``X`` of shape (N, p) and ``beta`` of shape (H, p).

    Returns an (H, N) array.
    """
    X = np.atleast_2d(X)
    beta = np.atleast_2d(beta)
    eta = beta[:, 0:1] * X[None, :, 0]
    for j in range(1, X.shape[1]):
        eta = eta + beta[:, j : j + 1] * X[None, :, j]
    return eta


def log_dens_normal(y, x, beta, sigma):
    """log N(y; x'beta, sigma) for a single design row, or broadcast batches."""
    mu = linear_predictor(x, beta)
    sigma = np.reshape(sigma, (-1, 1))
    out = _normal_kernel(np.asarray(y, dtype=np.float64), mu, sigma)
    return float(out[0, 0]) if out.size == 1 else out


def _normal_kernel(y, mu, sigma):
    z = (y - mu) / sigma
    return -LOG_SQRT_2PI - np.log(sigma) - 0.5 * z * z


def log_dens_poisson(y, x, beta):
    """y*eta - exp(eta) - log(y!) with eta = x'beta."""
    y = np.asarray(y)
    if np.any(y < 0):
        raise DomainError("Poisson outcome must be a non-negative integer")
    eta = linear_predictor(x, beta)
    out = _poisson_kernel(y, eta)
    return float(out[0, 0]) if out.size == 1 else out


def _poisson_kernel(y, eta):
    y = np.asarray(y, dtype=np.float64)
    with np.errstate(over="ignore"):
        return y * eta - np.exp(eta) - gammaln(y + 1.0)


def log_dens_multinomial(y, x, blocks):
    """Log softmax probability of level ``y`` (1-based) with level 1 as baseline.

    ``blocks`` has shape (k-1, p) for one draw or (H, k-1, p) for a batch.
    """
    blocks = np.asarray(blocks, dtype=np.float64)
    if blocks.ndim == 2:
        blocks = blocks[None]
    k = blocks.shape[1] + 1
    y = np.asarray(y)
    if np.any(y < 1) or np.any(y > k):
        raise DomainError(f"level index must lie in 1..{k}")
    out = _multinomial_kernel(y, multinomial_log_probs(x, blocks))
    return float(out[0, 0]) if out.size == 1 else out


def multinomial_log_probs(X: np.ndarray, blocks: np.ndarray) -> np.ndarray:
    """Log category probabilities, shape (H, N, k)."""
    X = np.atleast_2d(X)
    H, km1, _ = blocks.shape
    eta = np.zeros((H, X.shape[0], km1 + 1))
    for c in range(km1):
        eta[:, :, c + 1] = linear_predictor(X, blocks[:, c, :])
    return eta - logsumexp(eta, axis=2, keepdims=True)


def _multinomial_kernel(y, logp):
    idx = np.broadcast_to(np.asarray(y, dtype=np.int64) - 1, logp.shape[:2])
    return np.take_along_axis(logp, idx[..., None], axis=2)[..., 0]


@dataclass(frozen=True)
class StepParams:
    family: str
    coef: np.ndarray  # (H, p) or (H, k-1, p)
    sigma: np.ndarray | None = None  # (H,)


@dataclass(frozen=True)
class Theta:
    """Parameters of every plan step for a batch of draws with a common index."""

    steps: tuple[StepParams, ...]

    @property
    def n_draws(self) -> int:
        return self.steps[0].coef.shape[0]

    @classmethod
    def from_draws(cls, plan: ValidatedPlan, draws: Sequence, rows=None) -> "Theta":
        """Slice rows ``rows`` out of each step's draws matrix.

        ``draws`` is a sequence of objects with a ``values`` attribute (or
        plain arrays) whose columns follow ``plan.draw_names``.
        """
        out = []
        for s, step in enumerate(plan.steps):
            values = np.asarray(getattr(draws[s], "values", draws[s]), dtype=np.float64)
            if values.ndim == 1:
                values = values[None, :]
            if rows is not None:
                values = values[np.asarray(rows)]
            p = len(plan.design_names(s))
            expected = len(plan.draw_names(s))
            if values.shape[1] != expected:
                raise DomainError(
                    f"step {s + 1}: draws have {values.shape[1]} columns, expected {expected}"
                )
            if step.family == "normal":
                out.append(StepParams("normal", values[:, :p], values[:, p]))
            elif step.family == "poisson":
                out.append(StepParams("poisson", values[:, :p]))
            else:
                km1 = values.shape[1] // p
                out.append(StepParams("multinomial-logit", values.reshape(-1, km1, p)))
        return cls(tuple(out))


def step_log_density(params: StepParams, y, X) -> np.ndarray:
    """Log density of outcome ``y`` (N,) under design ``X`` (N, p): shape (H, N)."""
    if params.family == "normal":
        mu = linear_predictor(X, params.coef)
        return _normal_kernel(np.asarray(y, dtype=np.float64), mu, params.sigma[:, None])
    if params.family == "poisson":
        return _poisson_kernel(y, linear_predictor(X, params.coef))
    return _multinomial_kernel(y, multinomial_log_probs(X, params.coef))


def _dataset_values(data: Dataset) -> dict:
    return {name: data[name] for name in data.names}


def log_g_records(plan: ValidatedPlan, syn: Sequence[Dataset], theta: Theta) -> np.ndarray:
    """Per-record log density of the synthetic values, summed over datasets.

    Returns an (H, n) array whose row sums are :func:`log_g`.
    """
    # per-dataset totals first, so a duplicated dataset list doubles exactly
    total = None
    for data in syn:
        values = _dataset_values(data)
        part = None
        for s, step in enumerate(plan.steps):
            X = plan.design(s, values)
            ld = step_log_density(theta.steps[s], values[step.outcome], X)
            part = ld if part is None else part + ld
        total = part if total is None else total + part
    return total


def log_g(plan: ValidatedPlan, syn: Sequence[Dataset], theta: Theta):
    """Log probability of the synthetic datasets given each draw, shape (H,)."""
    out = log_g_records(plan, syn, theta).sum(axis=1)
    return float(out[0]) if out.size == 1 else out


def record_context(plan: ValidatedPlan, confidential: Dataset, i: int) -> dict:
    """Confidential values of record ``i`` for every column the plan reads."""
    return {name: confidential[name][i] for name in plan.context_columns}


def log_f(plan: ValidatedPlan, guess: Mapping[str, np.ndarray], context: Mapping, theta: Theta):
    """Sequential log density of guessed values for one record.

    ``guess`` maps each synthesized column to a value or an array of C
    candidate values; later steps condition on the guessed values of
    earlier ones. Returns an (H, C) array, or a float for a single draw
    and a single cell.
    """
    values = dict(context)
    values.update({k: np.asarray(v).reshape(-1) for k, v in guess.items()})
    total = None
    for s, step in enumerate(plan.steps):
        X = plan.design(s, values)
        y = np.broadcast_to(values[step.outcome], (X.shape[0],))
        ld = step_log_density(theta.steps[s], y, X)
        total = ld if total is None else total + ld
    return float(total[0, 0]) if total.size == 1 else total


def log_f_star(plan: ValidatedPlan, truth: Mapping[str, object], context: Mapping, theta: Theta):
    """:func:`log_f` evaluated at the record's true confidential values."""
    return log_f(plan, truth, context, theta)
