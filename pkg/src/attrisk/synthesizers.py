"""Bayesian synthesizers: posterior draws and posterior predictive simulation."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from ._seeding import seed_sequence
from .density import Theta, linear_predictor, multinomial_log_probs
from .errors import FitError, ParseError, SchemaError, SingularityError, SizeError
from .schema import Dataset, ModelSpec, SynthesisPlan, ValidatedPlan, validate_plan

logger = logging.getLogger(__name__)


@dataclass
class DrawsMatrix:
    """Posterior draws for one plan step, one row per draw."""

    step: int
    names: tuple[str, ...]
    values: np.ndarray
    family: str = ""
    acceptance_rate: float | None = None
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.names = tuple(self.names)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.names):
            raise SchemaError(
                f"draws for step {self.step + 1}: shape {self.values.shape} does not match "
                f"{len(self.names)} parameter names"
            )
        if not np.all(np.isfinite(self.values)):
            raise FitError(f"draws for step {self.step + 1} contain non-finite entries")
        if "sigma" in self.names and np.any(self.values[:, self.names.index("sigma")] < 0):
            raise FitError(f"draws for step {self.step + 1}: sigma must be non-negative")

    @property
    def n_draws(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]


@dataclass
class DrawsSet:
    """Per-step draws aligned with a synthesis plan."""

    matrices: list[DrawsMatrix]

    def __len__(self) -> int:
        return len(self.matrices)

    def __getitem__(self, s: int) -> DrawsMatrix:
        return self.matrices[s]

    def __iter__(self):
        return iter(self.matrices)

    @property
    def available(self) -> int:
        return min(m.n_draws for m in self.matrices)


@dataclass(frozen=True)
class NIGPrior:
    """beta | sigma^2 ~ N(0, sigma^2 * scale^2 * I), sigma^2 ~ InvGamma(a0, b0)."""

    scale: float = 2.0
    a0: float = 1.0
    b0: float = 1.0


@dataclass(frozen=True)
class NIGPosterior:
    mean: np.ndarray
    V: np.ndarray
    a: float
    b: float

    def sample(self, size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        sigma2 = self.b / rng.gamma(self.a, 1.0, size=size)
        L = np.linalg.cholesky(self.V)
        z = rng.standard_normal((size, self.mean.shape[0]))
        beta = self.mean + np.sqrt(sigma2)[:, None] * (z @ L.T)
        return beta, sigma2


def collinear_columns(X: np.ndarray, names: Sequence[str]) -> list[str]:
    """Columns that add nothing to the rank of the columns before them."""
    bad = []
    kept = []
    for j in range(X.shape[1]):
        trial = X[:, kept + [j]]
        if np.linalg.matrix_rank(trial) > len(kept):
            kept.append(j)
        else:
            bad.append(names[j])
    return bad


def _check_rank(X: np.ndarray, names: Sequence[str], spec: ModelSpec) -> None:
    if np.linalg.matrix_rank(X) < X.shape[1]:
        bad = collinear_columns(X, names)
        if X.shape[0] < X.shape[1]:
            raise SingularityError(
                f"{spec}: design has {X.shape[0]} rows for {X.shape[1]} coefficients; "
                f"collinear columns: {', '.join(bad)}"
            )
        raise SingularityError(f"{spec}: rank-deficient design, collinear columns: {', '.join(bad)}")


def nig_posterior(X: np.ndarray, y: np.ndarray, prior: NIGPrior = NIGPrior()) -> NIGPosterior:
    p = X.shape[1]
    precision = X.T @ X + np.eye(p) / prior.scale**2
    V = np.linalg.inv(precision)
    V = 0.5 * (V + V.T)
    mean = V @ (X.T @ y)
    a = prior.a0 + 0.5 * X.shape[0]
    b = prior.b0 + 0.5 * (y @ y - mean @ precision @ mean)
    return NIGPosterior(mean=mean, V=V, a=a, b=max(b, 1e-300))


def _step_plan(data: Dataset, spec: ModelSpec | ValidatedPlan, step: int) -> tuple[ValidatedPlan, int]:
    if isinstance(spec, ValidatedPlan):
        return spec, step
    columns = [c if c.name == spec.outcome else type(c)(c.name, c.kind, c.levels, None) for c in data.columns]
    return validate_plan(SynthesisPlan((spec,)), columns), 0


def fit_linear_conjugate(
    data: Dataset,
    spec: ModelSpec | ValidatedPlan,
    prior: NIGPrior = NIGPrior(),
    n_draws: int = 1000,
    seed=None,
    step: int = 0,
) -> DrawsMatrix:
    """Exact draws from the Normal-Inverse-Gamma posterior of a linear regression.

    ``spec`` is either a single :class:`ModelSpec` or a validated plan
    together with the ``step`` index to fit.
    """
    plan, s = _step_plan(data, spec, step)
    model = plan.steps[s]
    if model.family != "normal":
        raise FitError(f"{model}: conjugate fit requires family 'normal'")
    if n_draws < 1:
        raise SizeError("n_draws must be positive")
    values = {name: data[name] for name in data.names}
    X = plan.design(s, values)
    names = plan.design_names(s)
    _check_rank(X, names, model)
    post = nig_posterior(X, data[model.outcome].astype(np.float64), prior)
    rng = np.random.default_rng(seed)
    beta, sigma2 = post.sample(n_draws, rng)
    return DrawsMatrix(
        step=step,
        names=plan.draw_names(s),
        values=np.column_stack([beta, np.sqrt(sigma2)]),
        family="normal",
    )


class _GLMTarget:
    """Log posterior of a Poisson or multinomial-logit regression with N(0, s^2) priors."""

    def __init__(self, family: str, X: np.ndarray, y: np.ndarray, k: int, prior_scale: float):
        self.family = family
        self.X = X
        self.y = y
        self.p = X.shape[1]
        self.k = k
        self.inv_var = 1.0 / prior_scale**2
        if family == "multinomial-logit":
            self.onehot = (y[:, None] == np.arange(2, k + 1)[None, :]).astype(np.float64)
            self.dim = (k - 1) * self.p
        else:
            self.dim = self.p

    def log_post(self, theta: np.ndarray) -> float:
        prior = -0.5 * self.inv_var * float(theta @ theta)
        if self.family == "poisson":
            eta = linear_predictor(self.X, theta[None, :])[0]
            with np.errstate(over="ignore", invalid="ignore"):
                ll = float(np.sum(self.y * eta - np.exp(eta)))
        else:
            logp = multinomial_log_probs(self.X, theta.reshape(1, self.k - 1, self.p))[0]
            ll = float(np.take_along_axis(logp, (self.y - 1)[:, None], axis=1).sum())
        if not math.isfinite(ll):
            return -math.inf
        return ll + prior

    def grad_hess(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X = self.X
        if self.family == "poisson":
            mu = np.exp(np.clip(X @ theta, -700, 700))
            grad = X.T @ (self.y - mu) - self.inv_var * theta
            hess = -(X.T * mu) @ X - self.inv_var * np.eye(self.p)
            return grad, hess
        B = theta.reshape(self.k - 1, self.p)
        P = np.exp(multinomial_log_probs(X, B[None])[0][:, 1:])
        grad = ((self.onehot - P).T @ X).reshape(-1) - self.inv_var * theta
        hess = np.zeros((self.dim, self.dim))
        for c in range(self.k - 1):
            for d in range(self.k - 1):
                w = P[:, c] * ((c == d) - P[:, d])
                hess[c * self.p : (c + 1) * self.p, d * self.p : (d + 1) * self.p] = -(X.T * w) @ X
        hess -= self.inv_var * np.eye(self.dim)
        return grad, hess


def _find_mode(target: _GLMTarget, max_iter: int = 200) -> tuple[np.ndarray, np.ndarray]:
    theta = np.zeros(target.dim)
    lp = target.log_post(theta)
    for _ in range(max_iter):
        grad, hess = target.grad_hess(theta)
        step = np.linalg.solve(hess, -grad)
        t = 1.0
        while True:
            cand = theta + t * step
            lp_new = target.log_post(cand)
            if lp_new >= lp or t < 1e-8:
                break
            t *= 0.5
        converged = abs(lp_new - lp) < 1e-10 * (1.0 + abs(lp))
        theta, lp = cand, lp_new
        if converged:
            break
    _, hess = target.grad_hess(theta)
    return theta, hess


def fit_glm_metropolis(
    data: Dataset,
    spec: ModelSpec | ValidatedPlan,
    prior_scale: float = 2.0,
    iterations: int = 2000,
    burn_in: int = 1000,
    seed=None,
    step: int = 0,
    adapt_every: int = 50,
) -> DrawsMatrix:
    """Adaptive random-walk Metropolis for Poisson or multinomial-logit regressions.

    The chain starts at the posterior mode with a Gaussian proposal shaped by
    the inverse Hessian there. Its scale is tuned in batches during burn-in
    towards an acceptance rate of 0.3; ``iterations`` post-burn-in states are
    kept.
    """
    plan, s = _step_plan(data, spec, step)
    model = plan.steps[s]
    if model.family not in ("poisson", "multinomial-logit"):
        raise FitError(f"{model}: Metropolis fit requires a poisson or multinomial-logit family")
    if iterations < 1 or burn_in < 0:
        raise SizeError("iterations must be positive and burn_in non-negative")
    values = {name: data[name] for name in data.names}
    X = plan.design(s, values)
    _check_rank(X, plan.design_names(s), model)
    y = data[model.outcome]
    k = 0
    if model.family == "multinomial-logit":
        k = plan.column(model.outcome).n_levels
        if k < 2:
            raise FitError(f"{model}: a categorical outcome needs at least two levels")
        missing = sorted(set(range(1, k + 1)) - set(np.unique(y).tolist()))
        if missing:
            labels = [plan.column(model.outcome).levels[c - 1] for c in missing]
            raise FitError(f"{model}: levels absent from the data: {', '.join(labels)}")
    target = _GLMTarget(model.family, X, y, k, prior_scale)

    rng = np.random.default_rng(seed)
    theta, hess = _find_mode(target)
    try:
        cov = np.linalg.inv(-hess)
        chol = np.linalg.cholesky(0.5 * (cov + cov.T))
    except np.linalg.LinAlgError:
        chol = np.eye(target.dim) * 0.1
    scale = 2.38 / math.sqrt(target.dim)
    lp = target.log_post(theta)

    accepted = 0
    for it in range(burn_in):
        prop = theta + scale * (chol @ rng.standard_normal(target.dim))
        lp_prop = target.log_post(prop)
        if math.log(rng.uniform()) < lp_prop - lp:
            theta, lp = prop, lp_prop
            accepted += 1
        if (it + 1) % adapt_every == 0:
            rate = accepted / adapt_every
            scale *= math.exp(2.0 * (rate - 0.3))
            accepted = 0

    chain = np.empty((iterations, target.dim))
    accepted = 0
    for it in range(iterations):
        prop = theta + scale * (chol @ rng.standard_normal(target.dim))
        lp_prop = target.log_post(prop)
        if math.log(rng.uniform()) < lp_prop - lp:
            theta, lp = prop, lp_prop
            accepted += 1
        chain[it] = theta
    rate = accepted / iterations

    warnings = []
    if not 0.05 <= rate <= 0.7:
        msg = f"{model}: acceptance rate {rate:.3f} outside [0.05, 0.7] after adaptation"
        logger.warning(msg)
        warnings.append(msg)
    return DrawsMatrix(
        step=step,
        names=plan.draw_names(s),
        values=chain,
        family=model.family,
        acceptance_rate=rate,
        warnings=warnings,
    )


def fit_plan(
    data: Dataset,
    plan: ValidatedPlan,
    n_draws: int = 1000,
    burn_in: int = 1000,
    prior: NIGPrior = NIGPrior(),
    seed=None,
) -> DrawsSet:
    """Fit every step of ``plan`` on the confidential ``data``."""
    seeds = seed_sequence(seed).spawn(len(plan))
    matrices = []
    for s, step in enumerate(plan.steps):
        if step.family == "normal":
            dm = fit_linear_conjugate(data, plan, prior, n_draws=n_draws, seed=seeds[s], step=s)
        else:
            dm = fit_glm_metropolis(
                data, plan, prior.scale, iterations=n_draws, burn_in=burn_in, seed=seeds[s], step=s
            )
        matrices.append(dm)
    return DrawsSet(matrices)


def draw_index(n_available: int, m: int, thin: int, l: int) -> int:
    """Row used for synthetic dataset ``l`` (0-based); the last dataset uses the last draw."""
    return n_available - 1 - thin * (m - 1 - l)


def simulate_synthetic(
    plan: ValidatedPlan,
    confidential: Dataset,
    draws: DrawsSet | Sequence[DrawsMatrix],
    m: int = 1,
    thin: int = 5,
    seed=None,
) -> list[Dataset]:
    """Sequentially simulate ``m`` synthetic datasets from the posterior predictive.

    Each step conditions on the synthetic outputs of earlier steps and on the
    confidential values of unsynthesized predictors.
    """
    if m < 0 or thin < 1:
        raise SizeError("m must be non-negative and thin positive")
    if m == 0:
        return []
    draws = list(draws)
    if len(draws) != len(plan):
        raise SizeError(f"plan has {len(plan)} steps but {len(draws)} draws matrices were given")
    for s, dm in enumerate(draws):
        if m * thin > dm.n_draws:
            raise SizeError(
                f"step {s + 1}: m*thin = {m * thin} exceeds the {dm.n_draws} available draws"
            )
    out = []
    for l, ss in enumerate(seed_sequence(seed).spawn(m)):
        rng = np.random.default_rng(ss)
        rows = [draw_index(dm.n_draws, m, thin, l) for dm in draws]
        theta = Theta.from_draws(plan, [dm.values[r : r + 1] for dm, r in zip(draws, rows)])
        values = {name: confidential[name] for name in confidential.names}
        for s, step in enumerate(plan.steps):
            X = plan.design(s, values)
            values[step.outcome] = _simulate_step(theta.steps[s], X, rng)
        out.append(confidential.replace(tag=f"synthetic:{l + 1}", **{o: values[o] for o in plan.synthesized}))
    return out


def _simulate_step(params, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    if params.family == "normal":
        mu = linear_predictor(X, params.coef)[0]
        return rng.normal(mu, params.sigma[0], size=n)
    if params.family == "poisson":
        lam = np.exp(linear_predictor(X, params.coef)[0])
        return rng.poisson(lam, size=n)
    probs = category_probabilities(X, params.coef[0])
    cum = np.cumsum(probs, axis=1)
    u = rng.uniform(size=n)
    codes = (u[:, None] >= cum[:, :-1]).sum(axis=1) + 1
    return codes.astype(np.int64)


def category_probabilities(X: np.ndarray, blocks: np.ndarray) -> np.ndarray:
    """Softmax category probabilities (n, k) with category 1 as baseline."""
    logp = multinomial_log_probs(X, np.asarray(blocks)[None])[0]
    probs = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
    return probs / probs.sum(axis=1, keepdims=True)


def write_draws(dm: DrawsMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(dm.names)
        for row in dm.values:
            writer.writerow([format(float(v), ".17g") for v in row])


def read_draws(path, step: int = 0, plan: ValidatedPlan | None = None) -> DrawsMatrix:
    """Read a draws file; with ``plan`` given, columns are matched by name and reordered."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"draws file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty draws file") from None
        rows = []
        for r, rec in enumerate(reader, start=1):
            if not rec:
                continue
            if len(rec) != len(header):
                raise ParseError(f"{path}: row {r} has {len(rec)} cells, expected {len(header)}")
            try:
                rows.append([float(v) for v in rec])
            except ValueError:
                raise ParseError(f"{path}: non-numeric draw at row {r}") from None
    if not rows:
        raise SchemaError(f"{path}: no draws")
    values = np.array(rows)
    family = ""
    if plan is not None:
        expected = plan.draw_names(step)
        missing = [n for n in expected if n not in header]
        if missing:
            raise SchemaError(f"{path}: missing parameter columns {', '.join(missing)}")
        values = values[:, [header.index(n) for n in expected]]
        header = list(expected)
        family = plan.steps[step].family
    return DrawsMatrix(step=step, names=tuple(header), values=values, family=family)
