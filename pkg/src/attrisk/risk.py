"""Attribute disclosure risk by importance sampling over posterior draws.

For a target record and a grid of guesses, the probability of each guess
is proportional to the expected probability of the released synthetic
data under the posterior refit with the guess in place of the truth. That
expectation is approximated by reweighting the draws obtained on the
confidential data: the weight of draw ``h`` for a guess is the ratio of the
record's likelihood at the guess to its likelihood at the truth, normalized
over draws. The intruder is assumed to know every other record's
confidential values and the synthesis models.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .density import Theta, log_f, log_f_star, log_g, record_context
from .errors import AttriskError, DomainError, NumericalError, SizeError
from .schema import Dataset, ValidatedPlan

logger = logging.getLogger(__name__)

DEFAULT_G = 11
DEFAULT_H = 50
DEFAULT_RADIUS = 0.1


@dataclass(frozen=True)
class GuessGrid:
    """Candidate values for each synthesized variable of one record.

    ``truth_index`` holds 0-based positions of the true values.
    """

    variables: tuple[str, ...]
    kinds: tuple[str, ...]
    candidates: tuple[np.ndarray, ...]
    truth_index: tuple[int, ...]
    warnings: tuple[str, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.candidates)

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    @property
    def truth(self) -> dict:
        return {v: c[t] for v, c, t in zip(self.variables, self.candidates, self.truth_index)}

    @property
    def truth_flat(self) -> int:
        return int(np.ravel_multi_index(self.truth_index, self.shape))

    def cells(self) -> dict[str, np.ndarray]:
        """Flattened (C-order) candidate values of every cell, per variable."""
        mesh = np.meshgrid(*self.candidates, indexing="ij")
        return {v: m.reshape(-1) for v, m in zip(self.variables, mesh)}


def _resolve_G(plan: ValidatedPlan, G) -> dict[str, int]:
    cont = [v for v in plan.synthesized if plan.column(v).kind == "continuous"]
    if G is None:
        return {v: DEFAULT_G for v in cont}
    if isinstance(G, Mapping):
        out = {v: int(G.get(v, DEFAULT_G)) for v in cont}
    elif np.isscalar(G):
        out = {v: int(G) for v in cont}
    else:
        G = list(G)
        if len(G) == 1:
            G = G * len(cont)
        if len(G) != len(cont):
            raise DomainError(f"{len(G)} grid sizes given for {len(cont)} continuous variables")
        out = dict(zip(cont, (int(g) for g in G)))
    for v, g in out.items():
        if g < 1:
            raise DomainError(f"grid size for {v!r} must be at least 1")
    return out


def continuous_candidates(y: float, G: int, radius: float, fallback_sd: float = 1.0):
    """Equally spaced guesses on [y(1-r), y(1+r)] containing ``y`` exactly.

    Returns (candidates, truth_index, warning-or-None).
    """
    if radius <= 0:
        raise DomainError("radius must be positive")
    if y == 0.0:
        delta = radius * fallback_sd if fallback_sd > 0 else radius
        lo, hi = -delta, delta
    else:
        lo, hi = sorted((y * (1.0 - radius), y * (1.0 + radius)))
    if G == 1:
        return np.array([y]), 0, None
    cands = np.linspace(lo, hi, G)
    warning = None
    if G % 2 == 1:
        t = G // 2
        cands[t] = y
    else:
        hit = np.flatnonzero(cands == y)
        if hit.size:
            return cands, int(hit[0]), None
        t = int(np.searchsorted(cands, y))
        cands = np.insert(cands, t, y)
        warning = f"even grid size {G} does not contain the truth; inserted it (G={G + 1})"
    return cands, t, warning


def build_guess_grid(
    confidential: Dataset,
    i: int,
    plan: ValidatedPlan,
    G=None,
    radius: float = DEFAULT_RADIUS,
) -> GuessGrid:
    """Guesses for record ``i``: a neighbourhood grid for continuous variables,
    all declared levels for categorical ones and the distinct confidential
    values for counts."""
    sizes = _resolve_G(plan, G)
    cands, truth_idx, kinds, warnings = [], [], [], []
    for v in plan.synthesized:
        col = plan.column(v)
        y = confidential[v][i]
        if col.kind == "continuous":
            c, t, w = continuous_candidates(
                float(y), sizes[v], radius, fallback_sd=float(np.std(confidential[v], ddof=1)) if confidential.n > 1 else 1.0
            )
            if w:
                msg = f"record {i}, {v}: {w}"
                logger.warning(msg)
                warnings.append(msg)
        elif col.kind == "categorical":
            c = np.arange(1, col.n_levels + 1, dtype=np.int64)
            t = int(y) - 1
        else:
            c = np.unique(confidential[v])
            t = int(np.searchsorted(c, y))
        cands.append(c)
        truth_idx.append(t)
        kinds.append(col.kind)
    return GuessGrid(tuple(plan.synthesized), tuple(kinds), tuple(cands), tuple(truth_idx), tuple(warnings))


@dataclass
class RiskResult:
    record: int
    joint: np.ndarray
    marginals: list[np.ndarray]
    truth_rank: int
    abs_diff: list[float]
    truth_prob: float
    grid: GuessGrid = field(repr=False)

    @property
    def marginal_truth_probs(self) -> list[float]:
        return [float(m[t]) for m, t in zip(self.marginals, self.grid.truth_index)]

    @property
    def null_abs_diff(self) -> list[float]:
        """Mean distance to the truth of a uniformly random top guess."""
        out = []
        for kind, c, t in zip(self.grid.kinds, self.grid.candidates, self.grid.truth_index):
            if kind == "categorical":
                out.append(float(np.mean(c != c[t])))
            else:
                out.append(float(np.mean(np.abs(c.astype(np.float64) - float(c[t])))))
        return out


@dataclass
class RiskReport:
    results: list[RiskResult]
    metadata: dict

    def __len__(self) -> int:
        return len(self.results)


def strided_indices(n_available: int, H: int) -> np.ndarray:
    """``H`` evenly strided draw rows ending at the last available draw."""
    if H < 1:
        raise SizeError("H must be at least 1")
    if H > n_available:
        raise SizeError(f"H exceeds available draws ({H} > {n_available})")
    thin = n_available // H
    return n_available - 1 - thin * np.arange(H - 1, -1, -1)


def competition_rank(probs: np.ndarray, index: int) -> int:
    """Rank of ``probs[index]`` in descending order; ties share the smallest rank."""
    return 1 + int(np.count_nonzero(probs > probs[index]))


def _check_finite(name: str, arr: np.ndarray) -> None:
    if np.isnan(arr).any():
        h, c = np.argwhere(np.isnan(arr))[0]
        raise NumericalError(f"NaN in {name} at draw {h}, cell {c}")


def draws_theta(plan: ValidatedPlan, draws, H: int) -> Theta:
    n_available = min(np.asarray(getattr(d, "values", d)).shape[0] for d in draws)
    return Theta.from_draws(plan, draws, strided_indices(n_available, H))


def evaluate_record(
    i: int,
    confidential: Dataset,
    syn: Sequence[Dataset],
    draws,
    plan: ValidatedPlan,
    grid: GuessGrid,
    H: int = DEFAULT_H,
    prior_weights=None,
    theta: Theta | None = None,
    log_g_draws: np.ndarray | None = None,
) -> RiskResult:
    """Normalized posterior probabilities of every guess for record ``i``.

    ``theta`` and ``log_g_draws`` may be passed to reuse the draw subset and
    the synthetic-data log likelihood, which do not depend on the record.
    ``prior_weights`` are positive weights over the flattened grid.
    """
    if theta is None:
        theta = draws_theta(plan, draws, H)
    if log_g_draws is None:
        log_g_draws = np.atleast_1d(log_g(plan, syn, theta))
    lg = np.asarray(log_g_draws, dtype=np.float64)
    _check_finite("log g", lg[:, None])

    context = record_context(plan, confidential, i)
    lf = log_f(plan, grid.cells(), context, theta)
    lfs = log_f_star(plan, grid.truth, context, theta)
    lf = np.reshape(lf, (theta.n_draws, grid.size))
    lfs = np.reshape(lfs, (theta.n_draws, 1))
    _check_finite("log f", lf)
    _check_finite("log f*", lfs)

    log_ratio = lf - lfs
    with np.errstate(invalid="ignore"):
        shifted = log_ratio - log_ratio.max(axis=0, keepdims=True)
    if np.isnan(shifted).any():
        c = int(np.argwhere(np.isnan(shifted))[0][1])
        raise NumericalError(f"record {i}: importance weights vanish for every draw at cell {c}")
    log_w = shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))
    L = logsumexp(lg[:, None] + log_w, axis=0) - math.log(theta.n_draws)

    if prior_weights is not None:
        pw = np.asarray(prior_weights, dtype=np.float64).reshape(-1)
        if pw.shape[0] != grid.size or np.any(pw <= 0):
            raise DomainError("prior_weights must be positive with one entry per grid cell")
        # shift by the largest log weight so a constant prior adds exactly zero
        log_pw = np.log(pw)
        L = L + (log_pw - log_pw.max())

    top = L.max()
    if not np.isfinite(top):
        raise NumericalError(f"record {i}: all guess probabilities are zero")
    p = np.exp(L - top)
    joint = (p / p.sum()).reshape(grid.shape)

    marginals = []
    for ax in range(joint.ndim):
        others = tuple(a for a in range(joint.ndim) if a != ax)
        marginals.append(joint.sum(axis=others) if others else joint.copy())
    flat = joint.reshape(-1)
    truth_flat = grid.truth_flat
    abs_diff = []
    for kind, c, t, marg in zip(grid.kinds, grid.candidates, grid.truth_index, marginals):
        best = int(np.argmax(marg))
        if kind == "categorical":
            abs_diff.append(float(best != t))
        else:
            abs_diff.append(abs(float(c[best]) - float(c[t])))
    return RiskResult(
        record=i,
        joint=joint,
        marginals=marginals,
        truth_rank=competition_rank(flat, truth_flat),
        abs_diff=abs_diff,
        truth_prob=float(flat[truth_flat]),
        grid=grid,
    )


class RecordError(AttriskError):
    """Failures of one or more records in :func:`evaluate_all`."""

    def __init__(self, failures: Mapping[int, Exception]):
        self.failures = dict(failures)
        detail = "; ".join(f"record {i}: {e}" for i, e in sorted(self.failures.items()))
        super().__init__(f"{len(self.failures)} record(s) failed: {detail}")

    @property
    def numerical(self) -> bool:
        return any(isinstance(e, (NumericalError, FloatingPointError)) for e in self.failures.values())


def evaluate_all(
    confidential: Dataset,
    syn: Sequence[Dataset],
    draws,
    plan: ValidatedPlan,
    G=None,
    radius: float = DEFAULT_RADIUS,
    H: int = DEFAULT_H,
    records: Sequence[int] | None = None,
    threads: int = 1,
    seed=None,
) -> RiskReport:
    """Evaluate each requested record independently; results keep record order."""
    if records is None:
        records = range(confidential.n)
    records = [int(r) for r in records]
    for r in records:
        if not 0 <= r < confidential.n:
            raise DomainError(f"record index {r} outside 0..{confidential.n - 1}")
    syn = list(syn)
    if not syn:
        raise DomainError("at least one synthetic dataset is required")
    G_sizes = _resolve_G(plan, G)
    theta = draws_theta(plan, draws, H)
    lg = np.atleast_1d(log_g(plan, syn, theta))

    def one(i):
        grid = build_guess_grid(confidential, i, plan, G_sizes, radius)
        return evaluate_record(i, confidential, syn, draws, plan, grid, H, theta=theta, log_g_draws=lg)

    results: dict[int, RiskResult] = {}
    failures: dict[int, Exception] = {}

    def run(i):
        try:
            results[i] = one(i)
        except (AttriskError, ArithmeticError, ValueError) as exc:
            failures[i] = exc

    if threads > 1 and len(records) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, records))
    else:
        for i in records:
            run(i)
    if failures:
        raise RecordError(failures)

    ordered = [results[i] for i in records]
    shape = ordered[0].grid.shape if ordered else tuple()
    cells = math.prod(shape) if ordered else 0
    metadata = {
        "variables": list(plan.synthesized),
        "kinds": [plan.column(v).kind for v in plan.synthesized],
        "G": list(shape),
        "H": H,
        "m": len(syn),
        "radius": radius,
        "seed": seed,
        "n_records": len(ordered),
        "prior": "uniform",
        "uniform_prior": 1.0 / cells if cells else None,
        "marginal_uniform_prior": {v: 1.0 / g for v, g in zip(plan.synthesized, shape)},
        "steps": [str(s) for s in plan.steps],
        "families": [s.family for s in plan.steps],
    }
    return RiskReport(results=ordered, metadata=metadata)


def report_rows(report: RiskReport) -> list[dict]:
    """One flat row per record, as written to the report file."""
    rows = []
    for r in report.results:
        row = {"record": r.record, "truth_prob": r.truth_prob, "truth_rank": r.truth_rank}
        for j, v in enumerate(r.grid.variables):
            row[f"marginal_{v}"] = r.marginal_truth_probs[j]
            row[f"abs_diff_{v}"] = r.abs_diff[j]
            row[f"null_abs_diff_{v}"] = r.null_abs_diff[j]
        rows.append(row)
    return rows


def summarize(report: RiskReport) -> dict:
    """Aggregate per-record results into a summary table."""
    return summarize_rows(report_rows(report), report.metadata)


def summarize_rows(rows: Sequence[Mapping], metadata: Mapping) -> dict:
    if not rows:
        raise DomainError("cannot summarize an empty report")
    variables = list(metadata["variables"])
    prior = metadata["uniform_prior"]
    tp = np.array([r["truth_prob"] for r in rows], dtype=np.float64)
    ranks = np.array([r["truth_rank"] for r in rows], dtype=np.int64)
    hist = {int(k): int(v) for k, v in zip(*np.unique(ranks, return_counts=True))}
    summary = {
        "n_records": len(rows),
        "uniform_prior": prior,
        "mean_truth_prob": float(tp.mean()),
        "median_truth_prob": float(np.median(tp)),
        "fraction_below_prior": float(np.mean(tp < prior)),
        "rank1_count": int(np.sum(ranks == 1)),
        "rank_histogram": hist,
        "variables": {},
    }
    for v in variables:
        mt = np.array([r[f"marginal_{v}"] for r in rows], dtype=np.float64)
        ad = np.array([r[f"abs_diff_{v}"] for r in rows], dtype=np.float64)
        mprior = metadata["marginal_uniform_prior"][v]
        summary["variables"][v] = {
            "uniform_prior": mprior,
            "mean_marginal_truth_prob": float(mt.mean()),
            "median_marginal_truth_prob": float(np.median(mt)),
            "fraction_below_prior": float(np.mean(mt < mprior)),
            "mean_abs_diff": float(ad.mean()),
        }
    return summary
