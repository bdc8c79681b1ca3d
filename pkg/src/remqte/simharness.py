"""Monte Carlo comparison of complete randomization (CRE) and rerandomization (ReM).

For every cell ``(r1, alpha, r2_target)`` one finite population is generated
with its noise level calibrated so that the oracle R2 of the density-weighted
indicator contrast is near ``r2_target``.  The population is then held fixed
while ``replications`` CRE and ``replications`` ReM assignments are drawn and
analyzed, and the replications are summarized as bias, PRIV, PRIMSE, mean CI
length and coverage.

Every replication has its own random stream derived from
``(master_seed, cell, design, replication)``, so reports do not depend on the
number of worker processes.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .design import BalanceState, DesignSpec, sample_cre, sample_rem
from .errors import (
    CalibrationFailedError,
    DegeneracyError,
    InvalidParameterError,
    MalformedInputError,
    RemQteError,
)
from .estimate import ObservedData, analyze
from .limitlaw import DEFAULT_MIXTURE_DRAWS, mixture_draws, priasv
from .popmodel import FinitePopulation, oracle_variance_components

log = logging.getLogger(__name__)

MODELS = ("linear", "nonlinear", "ihdp")
DESIGNS = ("CRE", "ReM")
IHDP_SHAPE = (747, 25)
IHDP_BETA_SUPPORT = np.arange(5)
IHDP_BETA_PROBS = np.array([0.5, 0.2, 0.15, 0.1, 0.05])
IHDP_SHIFT = 4.0
IHDP_SIGMA = math.sqrt(3.0)

CALIBRATION_TOL = 0.02
CALIBRATION_MAX_ITER = 40


def _as_tuple(v, cast=float):
    if isinstance(v, (list, tuple)):
        return tuple(cast(x) for x in v)
    return (cast(v),)


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation study.

    ``r1``, ``alphas`` and ``r2_targets`` may list several values; the study
    runs every combination.  For ``model = "ihdp"`` the population size and
    covariates come from ``covariate_file`` (or a synthetic stand-in when it is
    null) and ``n``, ``covariate_dim``, ``rho``, ``mu0``, ``mu1`` and
    ``beta_rule`` are unused.
    """

    model: str = "linear"
    n: int = 1000
    covariate_dim: int = 10
    rho: float = 0.5
    mu0: float = 0.0
    mu1: float = 5.0
    beta_rule: str = "constant:0.1"
    alphas: tuple = (0.25, 0.5, 0.75)
    r2_targets: tuple = (0.2, 0.5)
    r1: tuple = (0.5,)
    acceptance_probability: float = 0.001
    replications: int = 2000
    miscoverage: float = 0.05
    bandwidth_rule: str = "n^-1/3"
    master_seed: int = 0
    workers: int = 1
    covariate_file: str | None = None

    def __post_init__(self):
        for name in ("alphas", "r2_targets", "r1"):
            object.__setattr__(self, name, _as_tuple(getattr(self, name)))
        if self.model not in MODELS:
            raise InvalidParameterError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.replications < 1:
            raise InvalidParameterError("replications must be >= 1")
        if not 0.0 <= self.rho < 1.0:
            raise InvalidParameterError(f"rho must lie in [0, 1), got {self.rho}")
        for t in self.r2_targets:
            if not 0.0 < t < 1.0:
                raise InvalidParameterError(f"r2 targets must lie in (0, 1), got {t}")
        for a in self.alphas:
            if not 0.0 < a < 1.0:
                raise InvalidParameterError(f"quantile levels must lie in (0, 1), got {a}")
        for r in self.r1:
            if not 0.0 < r < 1.0:
                raise InvalidParameterError(f"r1 must lie in (0, 1), got {r}")
        if not 0.0 < self.acceptance_probability <= 1.0:
            raise InvalidParameterError("acceptance_probability must lie in (0, 1]")
        if not 0.0 < self.miscoverage < 1.0:
            raise InvalidParameterError("miscoverage must lie in (0, 1)")
        if self.workers < 1:
            raise InvalidParameterError("workers must be >= 1")
        self.beta(self.covariate_dim)
        self.bandwidth(self.n)

    def beta(self, p: int) -> np.ndarray:
        kind, _, value = self.beta_rule.partition(":")
        if kind != "constant":
            raise InvalidParameterError(f"unknown beta rule {self.beta_rule!r}; use 'constant:<c>'")
        try:
            c = float(value)
        except ValueError as exc:
            raise InvalidParameterError(f"bad beta rule {self.beta_rule!r}") from exc
        return np.full(p, c)

    def bandwidth(self, n: int) -> float:
        rule = str(self.bandwidth_rule).replace(" ", "")
        if rule == "n^-1/3":
            return n ** (-1.0 / 3.0)
        try:
            h = float(rule)
        except ValueError as exc:
            raise InvalidParameterError(f"bandwidth rule must be 'n^-1/3' or a number, "
                                        f"got {self.bandwidth_rule!r}") from exc
        if not h > 0:
            raise InvalidParameterError("bandwidth must be positive")
        return h

    def replace(self, **changes) -> "ScenarioConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(changes)
        return ScenarioConfig(**d)


def load_config(path) -> ScenarioConfig:
    """Read a JSON object whose keys are ScenarioConfig field names."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MalformedInputError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise MalformedInputError(f"{path}: expected a JSON object")
    known = {f.name for f in fields(ScenarioConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise MalformedInputError(f"{path}: unknown keys {unknown}; allowed: {sorted(known)}")
    return ScenarioConfig(**raw)


def dump_config(config: ScenarioConfig) -> str:
    return json.dumps(asdict(config), indent=2)


# -- population generators -------------------------------------------------

def _equicorrelated_normal(n: int, p: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    cov = (1.0 - rho) * np.eye(p) + rho * np.ones((p, p))
    return rng.standard_normal((n, p)) @ np.linalg.cholesky(cov).T


def _check_sigma(sigma: float) -> None:
    if not sigma >= 0:
        raise InvalidParameterError(f"noise scale must be nonnegative, got {sigma!r}")


def gen_linear(config: ScenarioConfig, sigma_eps: float, rng: np.random.Generator) -> FinitePopulation:
    _check_sigma(sigma_eps)
    x = _equicorrelated_normal(config.n, config.covariate_dim, config.rho, rng)
    mean = x @ config.beta(config.covariate_dim)
    e1 = rng.standard_normal(config.n)
    e0 = rng.standard_normal(config.n)
    return FinitePopulation(config.mu1 + mean + sigma_eps * e1,
                            config.mu0 + mean + sigma_eps * e0, x)


def gen_nonlinear(config: ScenarioConfig, sigma_eps: float, rng: np.random.Generator) -> FinitePopulation:
    _check_sigma(sigma_eps)
    x = _equicorrelated_normal(config.n, config.covariate_dim, config.rho, rng)
    mean = np.exp(x) @ config.beta(config.covariate_dim)
    e1 = rng.standard_normal(config.n)
    e0 = rng.standard_normal(config.n)
    return FinitePopulation(config.mu1 + mean + sigma_eps * e1,
                            config.mu0 + mean + sigma_eps * e0, x)


def draw_ihdp_beta(rng: np.random.Generator, size: int = 26) -> np.ndarray:
    return rng.choice(IHDP_BETA_SUPPORT, size=size, p=IHDP_BETA_PROBS).astype(float)


def synthetic_ihdp_covariates(rng: np.random.Generator) -> np.ndarray:
    """747 x 25 stand-in: 6 standardized continuous columns and 19 binary indicators."""
    n = IHDP_SHAPE[0]
    latent = _equicorrelated_normal(n, 6, 0.2, rng)
    cont = (latent - latent.mean(axis=0)) / latent.std(axis=0, ddof=1)
    probs = np.linspace(0.1, 0.6, 19)
    logits = np.log(probs / (1 - probs)) + 0.5 * latent[:, [0]]
    binary = (rng.random((n, 19)) < 1.0 / (1.0 + np.exp(-logits))).astype(float)
    return np.column_stack([cont, binary])


def gen_ihdp(covariates, rng: np.random.Generator, sigma_eps: float = IHDP_SIGMA) -> FinitePopulation:
    """Hill-style outcomes on IHDP covariates (array or path to a delimited file).

    The last of the 747 units is dropped.  Outcomes use the intercept-augmented
    26-column design; the returned population keeps only the 25 raw covariates.
    """
    _check_sigma(sigma_eps)
    if isinstance(covariates, (str, Path)):
        from .io import read_matrix
        covariates = read_matrix(covariates)
    x = np.asarray(covariates, dtype=float)
    if x.shape != IHDP_SHAPE:
        raise MalformedInputError(f"IHDP covariates must be {IHDP_SHAPE[0]}x{IHDP_SHAPE[1]}, "
                                  f"got {'x'.join(map(str, x.shape))}")
    if not np.all(np.isfinite(x)):
        raise MalformedInputError("IHDP covariates contain non-finite values")
    x = x[:-1]
    design = np.column_stack([np.ones(len(x)), x])
    beta = draw_ihdp_beta(rng, design.shape[1])
    mean = design @ beta
    e0 = rng.standard_normal(len(x))
    e1 = rng.standard_normal(len(x))
    return FinitePopulation(mean + IHDP_SHIFT + sigma_eps * e1, mean + sigma_eps * e0, x)


def _generator(config: ScenarioConfig, ihdp_x: np.ndarray | None):
    if config.model == "linear":
        return lambda sigma, rng: gen_linear(config, sigma, rng)
    if config.model == "nonlinear":
        return lambda sigma, rng: gen_nonlinear(config, sigma, rng)
    return lambda sigma, rng: gen_ihdp(ihdp_x, rng, sigma)


def _ihdp_covariates(config: ScenarioConfig) -> np.ndarray | None:
    if config.model != "ihdp":
        return None
    if config.covariate_file:
        from .io import read_matrix
        return read_matrix(config.covariate_file)
    seed = np.random.SeedSequence(config.master_seed, spawn_key=(2**31 - 1,))
    return synthetic_ihdp_covariates(np.random.default_rng(seed))


def calibrate_noise(config: ScenarioConfig, alpha: float, target_r2: float, seed,
                    r1: float | None = None, ihdp_x: np.ndarray | None = None) -> float:
    """Noise scale whose population has oracle R2 within 0.02 of ``target_r2``.

    Every probe regenerates the population from the same ``seed`` so that only
    the noise scale changes between probes.  Bisection runs on ``log(sigma)``.
    """
    if not 0.01 < target_r2 < 0.95:
        raise InvalidParameterError(f"target R2 must lie in (0.01, 0.95), got {target_r2}")
    r1 = config.r1[0] if r1 is None else r1
    if config.model == "ihdp" and ihdp_x is None:
        ihdp_x = _ihdp_covariates(config)
    make = _generator(config, ihdp_x)
    seed = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)

    def r2_at(sigma: float) -> float:
        pop = make(sigma, np.random.default_rng(seed))
        n1 = int(round(r1 * pop.n))
        law = oracle_variance_components(pop, alpha, n1 / pop.n, config.bandwidth(pop.n))
        return law.R2_tilde

    scale = float(np.std(make(0.0, np.random.default_rng(seed)).y0))
    if not scale > 0:
        scale = 1.0
    lo, hi = math.log(1e-2 * scale), math.log(1e2 * scale)
    r_lo, r_hi = r2_at(math.exp(lo)), r2_at(math.exp(hi))
    if not (r_lo > target_r2 > r_hi):
        raise CalibrationFailedError(
            f"target R2 {target_r2} is outside the reachable range "
            f"[{r_hi:.3f}, {r_lo:.3f}] for model {config.model!r} at alpha={alpha}")
    mid = 0.5 * (lo + hi)
    for _ in range(CALIBRATION_MAX_ITER):
        mid = 0.5 * (lo + hi)
        r = r2_at(math.exp(mid))
        if abs(r - target_r2) < CALIBRATION_TOL:
            break
        if r > target_r2:
            lo = mid
        else:
            hi = mid
    return math.exp(mid)


# -- replication engine ----------------------------------------------------

@dataclass(frozen=True)
class ReplicationResult:
    design: str
    tau_hat: float
    ci_low: float
    ci_high: float
    covered: bool
    attempts: int
    clamped: bool


@dataclass(frozen=True)
class _CellContext:
    seed: int
    cell_id: int
    design_code: int
    design: str
    pop: FinitePopulation
    state: BalanceState
    spec: DesignSpec
    threshold: float
    alpha: float
    tau: float
    miscoverage: float
    bandwidth: float
    draws: object


_WORKER_CTX: _CellContext | None = None


def _init_worker(ctx: _CellContext) -> None:
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _replicate(ctx: _CellContext, rep: int) -> ReplicationResult:
    seq = np.random.SeedSequence(ctx.seed, spawn_key=(ctx.cell_id, ctx.design_code, rep + 1))
    rng = np.random.default_rng(seq)
    if ctx.design == "CRE":
        draw = sample_cre(ctx.spec.n, ctx.spec.n1, rng)
    else:
        draw = sample_rem(ctx.state, ctx.spec, rng)
    data = ObservedData(ctx.pop.observe(draw.z), draw.z, ctx.pop.covariates)
    res = analyze(data, ctx.alpha, ctx.threshold, ctx.miscoverage, ctx.bandwidth,
                  draws=ctx.draws, chol=ctx.state.chol)
    return ReplicationResult(
        design=ctx.design, tau_hat=res.tau_hat, ci_low=res.ci_low, ci_high=res.ci_high,
        covered=bool(res.ci_low <= ctx.tau <= res.ci_high), attempts=draw.attempts,
        clamped=res.clamped,
    )


def _replicate_chunk(reps: range) -> list[ReplicationResult]:
    return [_replicate(_WORKER_CTX, r) for r in reps]


def _run_design(ctx: _CellContext, replications: int, workers: int) -> list[ReplicationResult]:
    if workers == 1:
        return [_replicate(ctx, r) for r in range(replications)]
    chunk = max(1, math.ceil(replications / (4 * workers)))
    chunks = [range(s, min(s + chunk, replications)) for s in range(0, replications, chunk)]
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                             initargs=(ctx,)) as pool:
        parts = list(pool.map(_replicate_chunk, chunks))
    return [r for part in parts for r in part]


# -- aggregation -----------------------------------------------------------

@dataclass(frozen=True)
class ReportRow:
    r1: float
    alpha: float
    r2_target: float
    design: str
    bias: float
    priv: float
    primse: float
    ci_length: float
    coverage: float
    clamps: int
    mean_attempts: float


@dataclass(frozen=True)
class CellSummary:
    r1: float
    alpha: float
    r2_target: float
    sigma: float
    tau: float
    r2_oracle: float
    priasv_theory: float
    threshold: float


@dataclass
class ScenarioReport:
    config: ScenarioConfig
    rows: list[ReportRow] = field(default_factory=list)
    cells: list[CellSummary] = field(default_factory=list)
    results: dict = field(default_factory=dict, repr=False)

    def row(self, design: str, r1: float | None = None, alpha: float | None = None,
            r2_target: float | None = None) -> ReportRow:
        hits = [r for r in self.rows if r.design == design
                and (r1 is None or r.r1 == r1)
                and (alpha is None or r.alpha == alpha)
                and (r2_target is None or r.r2_target == r2_target)]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows match design={design}, r1={r1}, alpha={alpha}, "
                           f"r2_target={r2_target}")
        return hits[0]


def summarize(results: list[ReplicationResult], tau: float, baseline: list[ReplicationResult]):
    """Bias, PRIV, PRIMSE, mean CI length and coverage of ``results`` against ``baseline``."""
    est = np.array([r.tau_hat for r in results])
    ref = np.array([r.tau_hat for r in baseline])
    var, var_ref = np.var(est, ddof=1) if len(est) > 1 else 0.0, \
        np.var(ref, ddof=1) if len(ref) > 1 else 0.0
    mse, mse_ref = np.mean((est - tau) ** 2), np.mean((ref - tau) ** 2)
    priv = 100.0 * (1.0 - var / var_ref) if var_ref > 0 else 0.0
    primse = 100.0 * (1.0 - mse / mse_ref) if mse_ref > 0 else 0.0
    return dict(
        bias=float(est.mean() - tau),
        priv=float(priv),
        primse=float(primse),
        ci_length=float(np.mean([r.ci_high - r.ci_low for r in results])),
        coverage=float(np.mean([r.covered for r in results])),
        clamps=int(sum(r.clamped for r in results)),
        mean_attempts=float(np.mean([r.attempts for r in results])),
    )


def scenario_cells(config: ScenarioConfig):
    return [(r1, a, t) for r1 in sorted(config.r1) for a in sorted(config.alphas)
            for t in sorted(config.r2_targets)]


def run_scenario(config: ScenarioConfig, mixture_m: int = DEFAULT_MIXTURE_DRAWS) -> ScenarioReport:
    report = ScenarioReport(config)
    ihdp_x = _ihdp_covariates(config)
    make = _generator(config, ihdp_x)
    for cell_id, (r1, alpha, target) in enumerate(scenario_cells(config)):
        where = f"cell {cell_id} (r1={r1}, alpha={alpha}, R2 target={target})"
        pop_seed = np.random.SeedSequence(config.master_seed, spawn_key=(cell_id, 0))
        sigma = calibrate_noise(config, alpha, target, pop_seed, r1, ihdp_x)
        pop = make(sigma, np.random.default_rng(pop_seed))
        h = config.bandwidth(pop.n)
        spec = DesignSpec.from_fraction(pop.n, r1, pop.k, config.acceptance_probability)
        law = oracle_variance_components(pop, alpha, spec.r1, h)
        state = BalanceState.from_covariates(pop.covariates)
        report.cells.append(CellSummary(
            r1=r1, alpha=alpha, r2_target=target, sigma=sigma, tau=law.tau,
            r2_oracle=law.R2_tilde, priasv_theory=100.0 * priasv(law.R2_tilde, pop.k, spec.threshold),
            threshold=spec.threshold))
        log.info("%s: sigma=%.4g oracle R2=%.3f", where, sigma, law.R2_tilde)

        per_design = {}
        for code, design in enumerate(DESIGNS, start=1):
            a = math.inf if design == "CRE" else spec.threshold
            draws = mixture_draws(pop.k, a, mixture_m, np.random.default_rng(
                np.random.SeedSequence(config.master_seed, spawn_key=(cell_id, code, 0))))
            ctx = _CellContext(config.master_seed, cell_id, code, design, pop, state, spec, a,
                               alpha, law.tau, config.miscoverage, h, draws)
            try:
                per_design[design] = _run_design(ctx, config.replications, config.workers)
            except RemQteError as exc:
                raise type(exc)(f"{where}, design {design}: {exc}") from exc
            report.results[(cell_id, design)] = per_design[design]
        for design in DESIGNS:
            stats = summarize(per_design[design], law.tau, per_design["CRE"])
            report.rows.append(ReportRow(r1=r1, alpha=alpha, r2_target=target, design=design,
                                         **stats))
    return report


# -- rendering -------------------------------------------------------------

REPORT_COLUMNS = ("r1", "alpha", "R2", "design", "Bias", "PRIV", "PRIMSE", "CI Length",
                  "Coverage")
DIAGNOSTIC_COLUMNS = ("r1", "alpha", "R2", "sigma", "tau", "R2 oracle", "PRIASV theory",
                      "threshold", "design", "clamps", "mean attempts")


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _sorted_rows(report: ScenarioReport):
    return sorted(report.rows, key=lambda r: (r.r1, r.alpha, r.r2_target, DESIGNS.index(r.design)))


def render_report(report: ScenarioReport, path=None) -> str:
    """Delimited table with one row per (r1, alpha, R2 target, design)."""
    rows = [(f"{r.r1:g}", f"{r.alpha:g}", f"{r.r2_target:g}", r.design, f"{r.bias:.3f}",
             f"{r.priv:.3f}", f"{r.primse:.3f}", f"{r.ci_length:.3f}", f"{r.coverage:.3f}")
            for r in _sorted_rows(report)]
    text = _csv(rows, REPORT_COLUMNS)
    if path is not None:
        Path(path).write_text(text)
    return text


def render_diagnostics(report: ScenarioReport, path=None) -> str:
    """Per-row calibration and design diagnostics kept out of the metrics table."""
    cells = {(c.r1, c.alpha, c.r2_target): c for c in report.cells}
    rows = []
    for r in _sorted_rows(report):
        c = cells[(r.r1, r.alpha, r.r2_target)]
        rows.append((f"{r.r1:g}", f"{r.alpha:g}", f"{r.r2_target:g}", f"{c.sigma:.6g}",
                     f"{c.tau:.6g}", f"{c.r2_oracle:.4f}", f"{c.priasv_theory:.3f}",
                     f"{c.threshold:.6g}", r.design, str(r.clamps), f"{r.mean_attempts:.1f}"))
    text = _csv(rows, DIAGNOSTIC_COLUMNS)
    if path is not None:
        Path(path).write_text(text)
    return text


__all__ = [
    "ScenarioConfig", "load_config", "dump_config", "gen_linear", "gen_nonlinear", "gen_ihdp",
    "draw_ihdp_beta", "synthetic_ihdp_covariates", "calibrate_noise", "run_scenario",
    "render_report", "render_diagnostics", "summarize", "ReplicationResult", "ScenarioReport",
    "ReportRow", "CellSummary", "DegeneracyError",
]
