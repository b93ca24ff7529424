"""Simulated stand-in for a consumer expenditure survey extract.

The real microdata is confidential, so tests and demos use a table with
the same five variables and plausible marginal shapes: a binary urbanicity
indicator, a six-level race category, the number of children (0 to 7),
and log expenditure and log income.
"""
from __future__ import annotations

import numpy as np

from .schema import ColumnSchema, Dataset, ModelSpec, SynthesisPlan, ValidatedPlan, validate_plan

URBAN_LEVELS = ("Urban", "Rural")
RACE_LEVELS = ("White", "Black", "Asian", "NativeAmerican", "PacificIslander", "Multirace")
MAX_KIDS = 7

CE_COLUMNS = (
    ColumnSchema("Urban", "categorical", URBAN_LEVELS),
    ColumnSchema("Race", "categorical", RACE_LEVELS),
    ColumnSchema("KidsCount", "count"),
    ColumnSchema("LogExpenditure", "continuous"),
    ColumnSchema("LogIncome", "continuous"),
)

PLANS = {
    "race": SynthesisPlan((ModelSpec("Race", ("LogIncome",), "multinomial-logit"),)),
    "two-continuous": SynthesisPlan(
        (
            ModelSpec("LogExpenditure", (), "normal"),
            ModelSpec("LogIncome", ("LogExpenditure",), "normal"),
        )
    ),
    "count-continuous": SynthesisPlan(
        (
            ModelSpec("LogExpenditure", ("Urban",), "normal"),
            ModelSpec("KidsCount", ("LogExpenditure", "Urban"), "poisson"),
        )
    ),
}


def _ensure_present(values: np.ndarray, support, rng: np.random.Generator, donor) -> np.ndarray:
    values = values.copy()
    taken = set()
    for v in support:
        if not np.any(values == v):
            pool = np.flatnonzero((values == donor) & ~np.isin(np.arange(values.size), list(taken)))
            j = int(rng.choice(pool))
            values[j] = v
            taken.add(j)
    return values


def make_ce_like(n: int = 5126, seed=None) -> Dataset:
    """Simulate ``n`` consumer units; every urbanicity and race level and every child count 0..7 occurs."""
    if n < len(RACE_LEVELS) + MAX_KIDS + 1:
        raise ValueError(f"n must be at least {len(RACE_LEVELS) + MAX_KIDS + 1}")
    rng = np.random.default_rng(seed)
    urban = np.where(rng.uniform(size=n) < 0.07, 2, 1)
    log_income = rng.normal(10.9, 0.9, size=n) - 0.15 * (urban == 2)
    log_exp = 5.2 + 0.33 * log_income + 0.1 * (urban == 1) + rng.normal(0.0, 0.55, size=n)

    race_base = np.array([0.0, -1.6, -2.6, -3.8, -4.5, -3.9])
    race_slope = np.array([0.0, -0.35, 0.25, -0.3, -0.1, -0.2])
    eta = race_base[None, :] + race_slope[None, :] * (log_income[:, None] - 10.9)
    probs = np.exp(eta - eta.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    u = rng.uniform(size=n)
    race = (u[:, None] >= np.cumsum(probs, axis=1)[:, :-1]).sum(axis=1) + 1

    lam = np.exp(-2.6 + 0.3 * log_exp - 0.25 * (urban == 2))
    kids = np.minimum(rng.poisson(lam), MAX_KIDS)

    urban = _ensure_present(urban, (1, 2), rng, donor=1)
    race = _ensure_present(race, range(1, len(RACE_LEVELS) + 1), rng, donor=1)
    kids = _ensure_present(kids, range(MAX_KIDS + 1), rng, donor=0)
    return Dataset(
        CE_COLUMNS,
        {
            "Urban": urban,
            "Race": race,
            "KidsCount": kids,
            "LogExpenditure": log_exp,
            "LogIncome": log_income,
        },
    )


def ce_plan(name: str, data: Dataset | None = None) -> ValidatedPlan:
    """One of the three archetype plans: ``race``, ``two-continuous`` or ``count-continuous``."""
    return validate_plan(PLANS[name], data if data is not None else CE_COLUMNS)
