"""Cross-fitted moment estimation: solve, sandwich variance, intervals.

``dml_fit`` runs the full pipeline: partition the sample (by unit for panel
scores), cross-fit every nuisance, assemble the linear score components,
solve theta = sum(psi_b) / sum(psi_a), and compute

    J_hat     = -mean(psi_a)                    (exact for linear scores)
    Sigma_hat = J^-1 mean(psi psi') J^-1'       (psi at theta_hat)
    se        = sqrt(Sigma_hat / n)
    ci        = theta_hat -+ c_{1-alpha/2} * se

``full_sample_fit`` is the no-cross-fitting comparison estimator: nuisances
fit once on the full sample and evaluated in-sample.

All reductions go through np.sum / np.mean (pairwise summation) on arrays
assembled in observation order, so results are identical no matter how the
surrounding work is scheduled across threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, FoldPartition, make_folds, validate
from .errors import IdentificationError
from .learners import (LearnerSpec, crossfit_predict_arrays, crossfit_r2,
                       fullsample_predict_arrays)
from .scores import (NuisanceSet, ScoreComponents, ScoreSpec, components,
                     n_observations, nuisance_requirements, prepare_context,
                     score_scalars)
from .stats import norm_quantile_two_sided


def solve_theta(comps: ScoreComponents) -> float:
    """theta_hat = sum(psi_b) / sum(psi_a) for the linear score."""
    denom = float(np.sum(comps.psi_a))
    if abs(denom) < 1e-12 * comps.n:
        raise IdentificationError("singular moment: sum of psi_a is numerically zero")
    return float(np.sum(comps.psi_b)) / denom


def sandwich_variance(comps: ScoreComponents, theta_hat: float) -> tuple[float, float]:
    """(J_hat, Sigma_hat) of the plug-in sandwich estimator."""
    j_hat = -float(np.mean(comps.psi_a))
    if j_hat == 0.0:
        raise IdentificationError("singular Jacobian")
    psi = comps.psi(theta_hat)
    sigma = float(np.mean(psi * psi)) / (j_hat * j_hat)
    return j_hat, sigma


def confidence_interval(theta_hat: float, sigma_hat: float, n: int,
                        alpha: float) -> tuple[float, float]:
    """Two-sided 1-alpha interval theta_hat -+ z * sqrt(sigma_hat / n)."""
    z = norm_quantile_two_sided(alpha)
    half = z * np.sqrt(sigma_hat / n)
    return (theta_hat - half, theta_hat + half)


@dataclass(frozen=True)
class CiLevel:
    alpha: float
    z: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "z", norm_quantile_two_sided(self.alpha))


@dataclass(frozen=True)
class DmlFit:
    """One fitted moment estimate with inference and provenance."""

    theta: float
    se: float
    ci: tuple[float, float]
    n: int
    K: int | None
    seed: int | None
    alpha: float
    score: ScoreSpec
    crossfit: bool
    j_hat: float
    sigma_hat: float
    psi_a: np.ndarray
    psi_b: np.ndarray
    diagnostics: dict
    weak_identification: bool

    def psi(self) -> np.ndarray:
        return self.psi_b - self.psi_a * self.theta

    def to_dict(self) -> dict:
        return {
            "theta": self.theta, "se": self.se,
            "ci": [self.ci[0], self.ci[1]],
            "n": self.n, "K": self.K, "seed": self.seed, "alpha": self.alpha,
            "score": {"kind": self.score.kind,
                      "options": {k: v for k, v in self.score.options.items()
                                  if isinstance(v, (int, float, str))}},
            "crossfit": self.crossfit,
            "diagnostics": self.diagnostics,
            "weak_identification": self.weak_identification,
        }


def resolve_learner(learners, name: str, slot: str) -> LearnerSpec:
    """Look up the learner for a nuisance by name, then slot, then default."""
    if isinstance(learners, LearnerSpec):
        return learners
    for key in (name, slot, "default"):
        if key in learners:
            return learners[key]
    raise ValueError(f"no learner configured for nuisance '{name}' (slot '{slot}')")


def _fit_nuisances(ctx, spec: ScoreSpec, learners, folds: FoldPartition | None,
                   clip: float) -> NuisanceSet:
    values: dict[str, np.ndarray] = {}
    diagnostics: dict[str, dict] = {}
    for req in nuisance_requirements(ctx, spec):
        lspec = resolve_learner(learners, req.name, req.slot)
        if folds is not None:
            oof = crossfit_predict_arrays(lspec, req.features, req.target, folds,
                                          subset=req.subset, probability=req.probability,
                                          clip=clip, name=req.name)
        else:
            oof = fullsample_predict_arrays(lspec, req.features, req.target,
                                            subset=req.subset, probability=req.probability,
                                            clip=clip, name=req.name)
        values[req.name] = oof.values
        rows = np.nonzero(req.subset)[0] if req.subset is not None else slice(None)
        try:
            r2 = crossfit_r2(req.target[rows], oof.values[rows])
        except ValueError:
            r2 = None
        diagnostics[req.name] = {"r2": r2, "clipped": oof.clipped, "learner": lspec.kind}
    return NuisanceSet(values=values, scalars=score_scalars(ctx, spec),
                       diagnostics=diagnostics, folds=folds)


def _weak_identification(comps: ScoreComponents) -> bool:
    sd = float(np.std(comps.psi_a))
    if sd == 0.0:
        return False
    return abs(float(np.mean(comps.psi_a))) < 5.0 * sd / np.sqrt(comps.n)


def _assemble(ctx, spec, nu, n, K, seed, alpha, crossfit) -> DmlFit:
    comps = components(ctx, nu, spec)
    theta = solve_theta(comps)
    j_hat, sigma = sandwich_variance(comps, theta)
    se = float(np.sqrt(sigma / n))
    ci = confidence_interval(theta, sigma, n, alpha)
    return DmlFit(theta=theta, se=se, ci=ci, n=n, K=K, seed=seed, alpha=alpha,
                  score=spec, crossfit=crossfit, j_hat=j_hat, sigma_hat=sigma,
                  psi_a=comps.psi_a, psi_b=comps.psi_b, diagnostics=nu.diagnostics,
                  weak_identification=_weak_identification(comps))


def _as_spec(score) -> ScoreSpec:
    return score if isinstance(score, ScoreSpec) else ScoreSpec(kind=score)


def dml_fit(ds: Dataset, score, learners, K: int = 10, seed: int = 0,
            alpha: float = 0.05, clip: float = 0.01,
            folds: FoldPartition | None = None) -> DmlFit:
    """Cross-fitted estimation and inference for one score.

    ``learners`` is a LearnerSpec applied to every nuisance or a dict keyed
    by nuisance name, slot ('outcome', 'propensity', 'treatment',
    'instrument'), or 'default'.  Panel scores are partitioned by unit.
    An explicit ``folds`` overrides (K, seed); they must cover the
    moment-level observations.
    """
    spec = _as_spec(score)
    validate(ds, spec.kind)
    ctx = prepare_context(ds, spec)
    n = n_observations(ctx)
    if folds is None:
        folds = make_folds(n, K, seed)
    elif folds.n != n:
        raise ValueError("fold partition does not cover the moment-level sample")
    nu = _fit_nuisances(ctx, spec, learners, folds, clip)
    return _assemble(ctx, spec, nu, n, folds.K, folds.seed, alpha, crossfit=True)


def full_sample_fit(ds: Dataset, score, learners, alpha: float = 0.05,
                    clip: float = 0.01) -> DmlFit:
    """No-cross-fitting comparison estimator (in-sample nuisances)."""
    spec = _as_spec(score)
    validate(ds, spec.kind)
    ctx = prepare_context(ds, spec)
    n = n_observations(ctx)
    nu = _fit_nuisances(ctx, spec, learners, None, clip)
    return _assemble(ctx, spec, nu, n, None, None, alpha, crossfit=False)


def repeat_fit(ds: Dataset, score, learners, K: int, seeds, alpha: float = 0.05,
               clip: float = 0.01, threads: int = 1) -> list[DmlFit]:
    """One dml_fit per partition seed, identical inputs otherwise.

    Results are collected in seed order, so thread count never changes
    the output.
    """
    seeds = list(seeds)

    def one(s: int) -> DmlFit:
        return dml_fit(ds, score, learners, K=K, seed=s, alpha=alpha, clip=clip)

    if threads > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, seeds))
    return [one(s) for s in seeds]
