"""Brute-force reference for the risk estimator.

Each guess is substituted into the confidential data, every linear step is
refit exactly through its conjugate posterior, and the probability of the
synthetic data is averaged over fresh posterior draws. Restricted to plans
made only of normal steps so the refits carry no sampler error.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from ._seeding import seed_sequence
from .density import Theta, log_g
from .errors import FitError
from .risk import GuessGrid
from .schema import Dataset, ValidatedPlan
from .synthesizers import DrawsSet, NIGPosterior, NIGPrior, _check_rank, fit_linear_conjugate, nig_posterior


@dataclass(frozen=True)
class OracleEstimate:
    log_raw: np.ndarray
    normalized: np.ndarray
    M: int
    seed: object

    @property
    def raw(self) -> np.ndarray:
        return np.exp(self.log_raw)


def _require_normal(plan: ValidatedPlan) -> None:
    bad = [str(s) for s in plan.steps if s.family != "normal"]
    if bad:
        raise FitError(f"oracle refits support normal steps only; got {', '.join(bad)}")


def _replace_record(confidential: Dataset, i: int, guess: Mapping[str, float], plan: ValidatedPlan) -> Dataset:
    replaced = {}
    for v in plan.synthesized:
        col = confidential[v].copy()
        col[i] = guess[v]
        replaced[v] = col
    return confidential.replace(**replaced)


def refit_posterior(
    confidential: Dataset,
    i: int,
    guess: Mapping[str, float],
    plan: ValidatedPlan,
    prior: NIGPrior = NIGPrior(),
    M: int = 2000,
    seed=None,
) -> DrawsSet:
    """Exact posterior draws after replacing record ``i``'s synthesized values with ``guess``."""
    _require_normal(plan)
    data = _replace_record(confidential, i, guess, plan)
    seeds = seed_sequence(seed).spawn(len(plan))
    return DrawsSet(
        [fit_linear_conjugate(data, plan, prior, n_draws=M, seed=seeds[s], step=s) for s in range(len(plan))]
    )


def refit_conjugate(
    confidential: Dataset,
    i: int,
    guess: Mapping[str, float],
    plan: ValidatedPlan,
    prior: NIGPrior = NIGPrior(),
) -> list[NIGPosterior]:
    """Closed-form posterior of every step after substituting ``guess`` for record ``i``."""
    _require_normal(plan)
    data = _replace_record(confidential, i, guess, plan)
    values = {name: data[name] for name in data.names}
    out = []
    for s, step in enumerate(plan.steps):
        X = plan.design(s, values)
        _check_rank(X, plan.design_names(s), step)
        out.append(nig_posterior(X, values[step.outcome].astype(np.float64), prior))
    return out


def _stacked_step_data(plan: ValidatedPlan, syn: Sequence[Dataset], s: int) -> tuple[np.ndarray, np.ndarray]:
    Xs, ys = [], []
    for data in syn:
        values = {name: data[name] for name in data.names}
        Xs.append(plan.design(s, values))
        ys.append(np.asarray(values[plan.steps[s].outcome], dtype=np.float64))
    return np.vstack(Xs), np.concatenate(ys)


def _log_g_given_sigma2(post: NIGPosterior, X: np.ndarray, y: np.ndarray, sigma2: np.ndarray) -> np.ndarray:
    """log E[g | sigma^2] with the coefficients integrated out.

    Given sigma^2 the synthetic outcomes are jointly N(X m, sigma^2 (I + X V X')).
    The quadratic form and determinant use the Woodbury identity so the cost
    stays linear in the number of synthetic records.
    """
    N = X.shape[0]
    r = y - X @ post.mean
    inner = np.linalg.inv(post.V) + X.T @ X
    Xr = X.T @ r
    quad = r @ r - Xr @ np.linalg.solve(inner, Xr)
    _, logdet = np.linalg.slogdet(np.eye(X.shape[1]) + post.V @ (X.T @ X))
    return -0.5 * N * np.log(2.0 * math.pi * sigma2) - 0.5 * logdet - 0.5 * quad / sigma2


def brute_force_probability(
    confidential: Dataset,
    syn: Sequence[Dataset],
    i: int,
    grid: GuessGrid,
    plan: ValidatedPlan,
    M: int = 2000,
    seed=None,
    prior: NIGPrior = NIGPrior(),
    integrate_coefficients: bool = False,
) -> OracleEstimate:
    """Direct Monte Carlo estimate of the synthetic-data probability for every grid cell.

    Every cell refits the synthesizer on the data with the guess substituted
    and averages the synthetic-data likelihood over ``M`` posterior draws.
    Cells share random numbers, so differences between cells carry far less
    noise than the raw estimates. With ``integrate_coefficients`` the
    regression coefficients are integrated out exactly given each variance
    draw, leaving a one-dimensional average per step.
    """
    _require_normal(plan)
    cells = grid.cells()
    base = seed_sequence(seed)
    log_raw = np.empty(grid.size)
    stacked = [_stacked_step_data(plan, syn, s) for s in range(len(plan))] if integrate_coefficients else None
    for c in range(grid.size):
        guess = {v: cells[v][c] for v in grid.variables}
        if integrate_coefficients:
            total = 0.0
            posts = refit_conjugate(confidential, i, guess, plan, prior)
            for s, (post, ss) in enumerate(zip(posts, seed_sequence(base).spawn(len(plan)))):
                rng = np.random.default_rng(ss)
                sigma2 = post.b / rng.gamma(post.a, 1.0, size=M)
                X, y = stacked[s]
                total += logsumexp(_log_g_given_sigma2(post, X, y, sigma2)) - math.log(M)
            log_raw[c] = total
        else:
            draws = refit_posterior(confidential, i, guess, plan, prior, M, base)
            lg = np.atleast_1d(log_g(plan, syn, Theta.from_draws(plan, draws)))
            log_raw[c] = logsumexp(lg) - math.log(M)
    p = np.exp(log_raw - log_raw.max())
    normalized = (p / p.sum()).reshape(grid.shape)
    return OracleEstimate(log_raw=log_raw.reshape(grid.shape), normalized=normalized, M=M, seed=seed)
