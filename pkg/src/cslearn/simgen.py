"""Synthetic data-generating processes for the coverage experiments.

Four scenarios share three Gaussian covariates with unit variances and
common pairwise correlation 0.5:

- S1: linear mean 1 + 0.5 x1 - 0.4 x2 + 0.6 x3, noise sd 0.75.
- S2: the x3 contribution is cubic with coefficient 0.3, chosen so that
  Var(mu(X)) = 0.21 + 15 c^2 + 0.3 c equals 1.65 under the correlated
  design (cross-moments: Cov(Xj, X3^3) = 3 * 0.5, Var(X3^3) = 15).
- S3: mean 3 * (1 + 0.5 x1 - 0.4 x2 + 0.6 x3) and log-linear scale
  exp(log 0.75 + 0.25 x1 + 0.08 x2 + 0.18 x3 + 0.9 x4) with a Bernoulli(0.5)
  fourth covariate.
- S4: the S1 response with ten spurious covariates appended (five N(0, 1),
  five Bernoulli(0.5)).

Sampling uses the counter-based Philox generator keyed by
(seed, replicate), with all draws made in one fixed order, so datasets are
byte-identical across runs and across any parallel execution layout.
"""

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .conformal import Interval
from .errors import ConfigError
from .learners import Dataset

SCENARIOS = ("S1", "S2", "S3", "S4")

_NOISE_SD = 0.75
_RHO = 0.5
_S2_CUBIC = 0.3
_S3_GAMMA = (math.log(0.75), 0.25, 0.08, 0.18, 0.9)


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    n: int
    seed: int
    replicate: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario '{self.scenario}'")
        if self.n < 20:
            raise ConfigError(f"scenario sample size must be >= 20, got {self.n}")


def compound_symmetric_cholesky(p=3, rho=_RHO):
    """Closed-form Cholesky factor of the equicorrelation matrix.

    Below the diagonal every row of a column shares one value, so a single
    recursion over columns suffices.
    """
    chol = np.zeros((p, p))
    sum_sq = 0.0
    for j in range(p):
        diag = math.sqrt(1.0 - sum_sq)
        chol[j, j] = diag
        off = (rho - sum_sq) / diag
        chol[j + 1:, j] = off
        sum_sq += off * off
    return chol


_CHOL3 = compound_symmetric_cholesky(3, _RHO)


def true_mean(scenario, x):
    """Conditional mean mu(x) of the scenario; vectorized over rows."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    linear = 1.0 + 0.5 * x[:, 0] - 0.4 * x[:, 1]
    if scenario == "S2":
        return linear + _S2_CUBIC * x[:, 2] ** 3
    if scenario == "S3":
        return 3.0 * (linear + 0.6 * x[:, 2])
    return linear + 0.6 * x[:, 2]


def true_scale(scenario, x):
    """Conditional noise sd sigma(x); constant except for S3."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if scenario == "S3":
        eta = _S3_GAMMA[0] + x[:, :4] @ np.asarray(_S3_GAMMA[1:])
        return np.exp(eta)
    return np.full(x.shape[0], _NOISE_SD)


def generate(config):
    """Draw a dataset and one identically-distributed test point.

    Returns (Dataset, (x_new, y_new)). The draw order is fixed: the three
    correlated normals, then the scenario extras (S3's Bernoulli column,
    S4's spurious block), then the noise.
    """
    if isinstance(config, ScenarioConfig):
        cfg = config
    else:
        cfg = ScenarioConfig(**config)
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence([cfg.seed, cfg.replicate, 11])
    ))
    m = cfg.n + 1
    core = rng.standard_normal((m, 3)) @ _CHOL3.T
    if cfg.scenario == "S3":
        x4 = (rng.random(m) < 0.5).astype(np.float64)
        x = np.column_stack([core, x4])
    elif cfg.scenario == "S4":
        cont = rng.standard_normal((m, 5))
        binary = (rng.random((m, 5)) < 0.5).astype(np.float64)
        x = np.column_stack([core, cont, binary])
    else:
        x = core
    noise = rng.standard_normal(m)
    y = true_mean(cfg.scenario, x) + true_scale(cfg.scenario, x) * noise
    data = Dataset(x[: cfg.n], y[: cfg.n])
    return data, (x[cfg.n].copy(), float(y[cfg.n]))


def true_interval(scenario, x, alpha):
    """Central (1 - alpha) Gaussian predictive interval under the true DGP,
    for diagnostics only."""
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario '{scenario}'")
    if not 0.0 < alpha <= 1.0:
        raise ConfigError(f"alpha must lie in (0, 1], got {alpha}")
    mu = float(true_mean(scenario, x)[0])
    sigma = float(true_scale(scenario, x)[0])
    z = NormalDist().inv_cdf(1.0 - alpha / 2.0) if alpha < 1.0 else 0.0
    return Interval(mu - z * sigma, mu + z * sigma)


def to_csv(data, path, response_name="response"):
    """Write a dataset in the harness CSV schema (x1..xp plus response)."""
    header = [f"x{j + 1}" for j in range(data.p)] + [response_name]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(data.n):
            cells = [repr(float(v)) for v in data.x[i]]
            cells.append(repr(float(data.y[i])))
            fh.write(",".join(cells) + "\n")
