"""Orthogonal (and comparison) score functions, linear in the parameter.

Every catalog score is represented by per-observation components
(psi_a, psi_b) such that psi(W_i; theta, eta) = psi_b_i - psi_a_i * theta.
This makes the moment solver a division, the Jacobian exact
(J = -mean(psi_a)), and the sandwich variance a plug-in.

Catalog (external identifiers are frozen):

* ate_dr    doubly robust / augmented IPW average treatment effect
* ate_ipw   inverse-propensity ATE (not orthogonal; comparison estimator)
* ate_ra    regression-adjustment ATE (not orthogonal; comparison estimator)
* wapo      weighted average potential outcome at a treatment level
* att_dr    doubly robust treatment effect on the treated
* late_dr   doubly robust local ATE for a binary instrument
* plr       partially linear regression coefficient
* pliv      partially linear IV (known instrument)
* pliv_flex flexible partially linear IV (fitted optimal instrument)
* fe_plr    first-differenced fixed-effects partially linear (IV) regression
* gtatt     group-time ATT for staggered adoption panels

``orthogonalize`` implements the generic correction-term construction
psi = m + sum_k alpha_k (A_k - gamma_k), with theta-dependent corrections
folded into psi_a (sign flipped).  ``check_orthogonality`` probes a score
numerically along nuisance perturbations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, PanelDataset, build_panel
from .errors import IdentificationError, ValidationError

SCORE_KINDS = ("ate_dr", "ate_ipw", "ate_ra", "wapo", "att_dr", "late_dr",
               "plr", "pliv", "pliv_flex", "fe_plr", "gtatt")

PANEL_KINDS = ("fe_plr", "gtatt")

ORTHOGONAL_KINDS = ("ate_dr", "wapo", "att_dr", "late_dr", "plr", "pliv",
                    "pliv_flex", "fe_plr", "gtatt")

_ROLE_REQS = {
    "ate_dr": (("outcome", "treatment"), ("treatment",)),
    "ate_ipw": (("outcome", "treatment"), ("treatment",)),
    "ate_ra": (("outcome", "treatment"), ("treatment",)),
    "wapo": (("outcome", "treatment"), ()),
    "att_dr": (("outcome", "treatment"), ("treatment",)),
    "late_dr": (("outcome", "treatment", "instrument"), ("treatment", "instrument")),
    "plr": (("outcome", "treatment"), ()),
    "pliv": (("outcome", "treatment", "instrument"), ()),
    "pliv_flex": (("outcome", "treatment", "instrument"), ()),
    "fe_plr": (("outcome", "treatment", "unit", "time"), ()),
    "gtatt": (("outcome", "unit", "time", "group"), ()),
}


def score_requirements_roles(kind: str) -> tuple[tuple, tuple]:
    """(required roles, roles that must be binary) for a score kind."""
    if kind not in _ROLE_REQS:
        raise ValueError(f"unknown score kind '{kind}'")
    return _ROLE_REQS[kind]


@dataclass(frozen=True)
class ScoreSpec:
    """A score kind plus its kind-specific options.

    Options: wapo -> {'level': d, 'omega': 'one' | number | callable};
    gtatt -> {'group': g, 'time': t}.
    """

    kind: str
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SCORE_KINDS:
            raise ValueError(f"unknown score kind '{self.kind}'")
        if self.kind == "gtatt" and not {"group", "time"} <= set(self.options):
            raise ValueError("gtatt requires options 'group' and 'time'")
        if self.kind == "wapo" and "level" not in self.options:
            raise ValueError("wapo requires option 'level'")


@dataclass(frozen=True)
class NuisanceReq:
    """One nuisance target of a score: what to fit, on which rows."""

    name: str
    slot: str  # learner lookup group: outcome | propensity | treatment | instrument
    probability: bool
    features: np.ndarray
    target: np.ndarray
    subset: np.ndarray | None = None


@dataclass(frozen=True)
class NuisanceSet:
    """Cross-fitted (or full-sample) nuisance predictions plus diagnostics."""

    values: dict[str, np.ndarray]
    scalars: dict[str, float] = field(default_factory=dict)
    diagnostics: dict[str, dict] = field(default_factory=dict)
    folds: object = None

    def v(self, name: str) -> np.ndarray:
        return self.values[name]

    def s(self, name: str) -> float:
        return self.scalars[name]


@dataclass(frozen=True)
class ScoreComponents:
    """psi(W_i; theta) = psi_b_i - psi_a_i * theta, both n-vectors."""

    psi_b: np.ndarray
    psi_a: np.ndarray

    def __post_init__(self):
        if self.psi_b.shape != self.psi_a.shape:
            raise ValidationError("psi_a / psi_b length mismatch")
        if not (np.all(np.isfinite(self.psi_b)) and np.all(np.isfinite(self.psi_a))):
            raise ValidationError("non-finite score components")
        self.psi_b.setflags(write=False)
        self.psi_a.setflags(write=False)

    @property
    def n(self) -> int:
        return self.psi_b.shape[0]

    def psi(self, theta: float) -> np.ndarray:
        return self.psi_b - self.psi_a * theta


def _check_prob(name: str, v: np.ndarray) -> None:
    if not np.all((v > 0.0) & (v < 1.0)):
        raise ValidationError(f"nuisance '{name}' has values at or outside (0, 1); "
                              "enable clipping for propensity-type predictions")


def _alpha_weights(D: np.ndarray, r: np.ndarray) -> np.ndarray:
    return D / r - (1.0 - D) / (1.0 - r)


# ---------------------------------------------------------------------------
# contexts: what a score computes with


@dataclass(frozen=True)
class GtattContext:
    """Unit-level cross-section derived from a panel for one (g, t) pair.

    For post periods (t >= g) the outcome change is taken against the last
    pre-treatment period g-1; for placebo pre-periods (t < g) it is the
    one-period wave difference.  The treated set is {G == g}; comparison
    units are not-yet-treated at t excluding the cohort itself
    ({G > t, G != g}, never-treated coded as +inf).  Controls are treated
    as time-invariant and taken from the first wave.
    """

    panel: PanelDataset
    g: float
    t: float
    treated: np.ndarray
    comparison: np.ndarray
    dy: np.ndarray
    X: np.ndarray


def _prepare_gtatt(pds: PanelDataset, g: float, t: float) -> GtattContext:
    periods = list(pds.periods)
    if g not in periods or t not in periods:
        raise ValidationError(f"gtatt: group {g:g} or time {t:g} not a panel period")
    pos_t = periods.index(t)
    base_pos = periods.index(g) - 1 if t >= g else pos_t - 1
    if base_pos < 0:
        raise ValidationError(f"gtatt: no base period before {'group ' + format(g, 'g') if t >= g else 'time ' + format(t, 'g')}")
    G = pds.group_vector().copy()
    G[~np.isfinite(G)] = np.inf
    treated = G == g
    comparison = (G > t) & (G != g)
    if not treated.any():
        raise IdentificationError(f"gtatt({g:g},{t:g}): no units first treated at {g:g}")
    if not comparison.any():
        raise IdentificationError(f"gtatt({g:g},{t:g}): no comparison units with G > {t:g}")
    Y = pds.wide_role("outcome")
    dy = Y[:, pos_t] - Y[:, base_pos]
    return GtattContext(panel=pds, g=g, t=t, treated=treated, comparison=comparison,
                        dy=dy, X=pds.controls_at(0))


@dataclass(frozen=True)
class FePlrContext:
    """Per-unit stacked first differences for the fixed-effects score.

    Without an instrument role the treatment instruments itself (Z = D).
    Period t's nuisances are functions of (X_t, X_t-1).
    """

    panel: PanelDataset
    dy: np.ndarray  # (units, T-1)
    dd: np.ndarray
    dz: np.ndarray
    has_instrument: bool

    def features_at(self, t_index: int) -> np.ndarray:
        cur = self.panel.controls_at(t_index + 1)
        prev = self.panel.controls_at(t_index)
        return np.column_stack([cur, prev]) if cur.shape[1] else np.empty((self.panel.units, 0))


def _prepare_fe_plr(pds: PanelDataset) -> FePlrContext:
    dy = pds.diff_role("outcome")
    dd = pds.diff_role("treatment")
    has_z = "instrument" in pds.base.roles
    dz = pds.diff_role("instrument") if has_z else dd
    return FePlrContext(panel=pds, dy=dy, dd=dd, dz=dz, has_instrument=has_z)


def prepare_context(ds: Dataset, spec: ScoreSpec):
    """Build the evaluation context: the dataset itself for cross-section
    scores, a panel-derived structure for fe_plr / gtatt."""
    if spec.kind == "gtatt":
        pds = ds if isinstance(ds, PanelDataset) else build_panel(ds)
        return _prepare_gtatt(pds, float(spec.options["group"]), float(spec.options["time"]))
    if spec.kind == "fe_plr":
        pds = ds if isinstance(ds, PanelDataset) else build_panel(ds)
        if pds.T < 2:
            raise ValidationError("fe_plr requires at least two periods")
        return _prepare_fe_plr(pds)
    return ds


def n_observations(ctx) -> int:
    """Moment-level observation count: units for panel scores, rows otherwise."""
    if isinstance(ctx, (GtattContext, FePlrContext)):
        return ctx.panel.units
    return ctx.n


def resolve_omega(ds: Dataset, omega) -> np.ndarray:
    """Resolve a WAPO weight spec: 'one', a numeric constant, or a callable
    of the control matrix."""
    if omega is None or (isinstance(omega, str) and omega == "one"):
        return np.ones(ds.n)
    if isinstance(omega, (int, float)):
        return np.full(ds.n, float(omega))
    if callable(omega):
        return np.asarray(omega(ds.controls_matrix()), dtype=np.float64)
    raise ValueError(f"unsupported omega spec {omega!r}")


# ---------------------------------------------------------------------------
# nuisance requirements per kind


def nuisance_requirements(ctx, spec: ScoreSpec) -> list[NuisanceReq]:
    kind = spec.kind
    if kind in ("ate_dr", "ate_ipw", "ate_ra", "att_dr", "plr", "wapo"):
        ds: Dataset = ctx
        Y, D, X = ds.outcome(), ds.treatment(), ds.controls_matrix()
        if kind == "ate_ipw":
            return [NuisanceReq("r", "propensity", True, X, D)]
        if kind == "ate_ra":
            return [NuisanceReq("ell0", "outcome", False, X, Y, D == 0.0),
                    NuisanceReq("ell1", "outcome", False, X, Y, D == 1.0)]
        if kind == "ate_dr":
            return [NuisanceReq("r", "propensity", True, X, D),
                    NuisanceReq("ell0", "outcome", False, X, Y, D == 0.0),
                    NuisanceReq("ell1", "outcome", False, X, Y, D == 1.0)]
        if kind == "att_dr":
            return [NuisanceReq("r", "propensity", True, X, D),
                    NuisanceReq("ell0", "outcome", False, X, Y, D == 0.0)]
        if kind == "plr":
            return [NuisanceReq("ell", "outcome", False, X, Y),
                    NuisanceReq("r", "treatment", False, X, D)]
        level = float(spec.options["level"])
        ind = (D == level).astype(np.float64)
        return [NuisanceReq("rd", "propensity", True, X, ind),
                NuisanceReq("elld", "outcome", False, X, Y, D == level)]
    if kind == "late_dr":
        ds = ctx
        Y, D, Z, X = ds.outcome(), ds.treatment(), ds.instrument(), ds.controls_matrix()
        return [NuisanceReq("rz", "propensity", True, X, Z),
                NuisanceReq("mu0", "outcome", False, X, Y, Z == 0.0),
                NuisanceReq("mu1", "outcome", False, X, Y, Z == 1.0),
                NuisanceReq("nu0", "treatment", True, X, D, Z == 0.0),
                NuisanceReq("nu1", "treatment", True, X, D, Z == 1.0)]
    if kind in ("pliv", "pliv_flex"):
        ds = ctx
        Y, D, Z, X = ds.outcome(), ds.treatment(), ds.instrument(), ds.controls_matrix()
        reqs = [NuisanceReq("g1", "outcome", False, X, Y),
                NuisanceReq("g2", "treatment", False, X, D)]
        if kind == "pliv":
            reqs.append(NuisanceReq("mz", "instrument", False, X, Z))
        else:
            ZX = np.column_stack([Z, X]) if X.shape[1] else Z.reshape(-1, 1)
            reqs.append(NuisanceReq("g3", "treatment", False, ZX, D))
        return reqs
    if kind == "fe_plr":
        fe: FePlrContext = ctx
        reqs = []
        for ti in range(fe.dy.shape[1]):
            F = fe.features_at(ti)
            reqs.append(NuisanceReq(f"g1@{ti}", "outcome", False, F, fe.dy[:, ti]))
            reqs.append(NuisanceReq(f"g2@{ti}", "treatment", False, F, fe.dd[:, ti]))
            if fe.has_instrument:
                reqs.append(NuisanceReq(f"mz@{ti}", "instrument", False, F, fe.dz[:, ti]))
        return reqs
    if kind == "gtatt":
        gt: GtattContext = ctx
        return [NuisanceReq("h1", "propensity", True, gt.X, gt.treated.astype(np.float64)),
                NuisanceReq("h0", "propensity", True, gt.X, gt.comparison.astype(np.float64)),
                NuisanceReq("ell0", "outcome", False, gt.X, gt.dy, gt.comparison)]
    raise ValueError(f"unknown score kind '{kind}'")


def score_scalars(ctx, spec: ScoreSpec) -> dict[str, float]:
    """Scalar nuisances computed on the full sample (no cross-fitting)."""
    if spec.kind == "att_dr":
        p = float(np.mean(ctx.treatment()))
        if p == 0.0:
            raise IdentificationError("att_dr: no treated observations")
        return {"p": p}
    if spec.kind == "gtatt":
        gt: GtattContext = ctx
        return {"p": float(np.mean(gt.treated))}
    return {}


# ---------------------------------------------------------------------------
# score components


def ate_dr_components(ds: Dataset, nu: NuisanceSet) -> ScoreComponents:
    """Doubly robust (augmented IPW) ATE score."""
    Y, D = ds.outcome(), ds.treatment()
    r, ell0, ell1 = nu.v("r"), nu.v("ell0"), nu.v("ell1")
    _check_prob("r", r)
    ell_d = D * ell1 + (1.0 - D) * ell0
    psi_b = _alpha_weights(D, r) * (Y - ell_d) + ell1 - ell0
    return ScoreComponents(psi_b=psi_b, psi_a=np.ones_like(psi_b))


def ate_ipw_components(ds: Dataset, nu: NuisanceSet) -> ScoreComponents:
    """Inverse-propensity-weighted ATE score (not Neyman orthogonal)."""
    Y, D = ds.outcome(), ds.treatment()
    r = nu.v("r")
    _check_prob("r", r)
    psi_b = _alpha_weights(D, r) * Y
    return ScoreComponents(psi_b=psi_b, psi_a=np.ones_like(psi_b))


def ate_ra_components(ds: Dataset, nu: NuisanceSet) -> ScoreComponents:
    """Regression-adjustment ATE score (not Neyman orthogonal)."""
    psi_b = nu.v("ell1") - nu.v("ell0")
    return ScoreComponents(psi_b=psi_b, psi_a=np.ones_like(psi_b))


def wapo_components(ds: Dataset, nu: NuisanceSet, level: float, omega) -> ScoreComponents:
    """Weighted average potential outcome at treatment level ``level``."""
    Y, D = ds.outcome(), ds.treatment()
    rd, elld = nu.v("rd"), nu.v("elld")
    _check_prob("rd", rd)
    w = resolve_omega(ds, omega)
    ind = (D == level).astype(np.float64)
    psi_b = ind * w * (Y - elld) / rd + w * elld
    return ScoreComponents(psi_b=psi_b, psi_a=np.ones_like(psi_b))


def att_dr_components(ds: Dataset, nu: NuisanceSet) -> ScoreComponents:
    """Doubly robust score for the treatment effect on the treated."""
    Y, D = ds.outcome(), ds.treatment()
    r, ell0 = nu.v("r"), nu.v("ell0")
    _check_prob("r", r)
    p = nu.s("p")
    resid = Y - ell0
    psi_b = (D * resid - (1.0 - D) * resid * r / (1.0 - r)) / p
    psi_a = D / p
    return ScoreComponents(psi_b=psi_b, psi_a=psi_a)


def late_dr_components(ds: Dataset, nu: NuisanceSet) -> ScoreComponents:
    """Doubly robust local ATE score; the theta-dependent correction term
    is folded into psi_a, keeping the score linear in theta."""
    Y, D, Z = ds.outcome(), ds.treatment(), ds.instrument()
    rz = nu.v("rz")
    _check_prob("rz", rz)
    mu0, mu1, nu0, nu1 = nu.v("mu0"), nu.v("mu1"), nu.v("nu0"), nu.v("nu1")
    psi_b = Z * (Y - mu1) / rz - (1.0 - Z) * (Y - mu0) / (1.0 - rz) + mu1 - mu0
    psi_a = Z * (D - nu1) / rz - (1.0 - Z) * (D - nu0) / (1.0 - rz) + nu1 - nu0
    return ScoreComponents(psi_b=psi_b, psi_a=psi_a)


def plr_components(ds: Dataset, nu: NuisanceSet) -> ScoreComponents:
    """Residual-on-residual score for the partially linear coefficient."""
    Y, D = ds.outcome(), ds.treatment()
    vtil = D - nu.v("r")
    psi_a = vtil * vtil
    if float(np.sum(psi_a)) == 0.0:
        raise IdentificationError("plr: no residual treatment variation")
    psi_b = vtil * (Y - nu.v("ell"))
    return ScoreComponents(psi_b=psi_b, psi_a=psi_a)


def pliv_components(ds: Dataset, nu: NuisanceSet) -> ScoreComponents:
    """Partially linear IV score with residualized instrument."""
    Y, D, Z = ds.outcome(), ds.treatment(), ds.instrument()
    ztil = Z - nu.v("mz")
    psi_b = ztil * (Y - nu.v("g1"))
    psi_a = ztil * (D - nu.v("g2"))
    return ScoreComponents(psi_b=psi_b, psi_a=psi_a)


def pliv_flex_components(ds: Dataset, nu: NuisanceSet) -> ScoreComponents:
    """Partially linear IV with the fitted optimal instrument E[D|Z,X]."""
    Y, D = ds.outcome(), ds.treatment()
    ztil = nu.v("g3") - nu.v("g2")
    psi_b = ztil * (Y - nu.v("g1"))
    psi_a = ztil * (D - nu.v("g2"))
    return ScoreComponents(psi_b=psi_b, psi_a=psi_a)


def fe_plr_components(ctx: FePlrContext, nu: NuisanceSet) -> ScoreComponents:
    """Per-unit score, summed over periods, for the first-differenced
    fixed-effects partially linear (IV) regression."""
    units, nt = ctx.dy.shape
    psi_b = np.zeros(units)
    psi_a = np.zeros(units)
    for ti in range(nt):
        mz = nu.v(f"mz@{ti}") if ctx.has_instrument else nu.v(f"g2@{ti}")
        ztil = ctx.dz[:, ti] - mz
        psi_b += ztil * (ctx.dy[:, ti] - nu.v(f"g1@{ti}"))
        psi_a += ztil * (ctx.dd[:, ti] - nu.v(f"g2@{ti}"))
    return ScoreComponents(psi_b=psi_b, psi_a=psi_a)


def gtatt_components(ctx: GtattContext, nu: NuisanceSet) -> ScoreComponents:
    """Doubly robust group-time ATT score on the unit-level cross-section."""
    h0, h1, ell0 = nu.v("h0"), nu.v("h1"), nu.v("ell0")
    _check_prob("h0", h0)
    p = nu.s("p")
    if p == 0.0:
        raise IdentificationError("gtatt: no treated units")
    T = ctx.treated.astype(np.float64)
    C = ctx.comparison.astype(np.float64)
    resid = ctx.dy - ell0
    psi_b = (T * resid - h1 * C * resid / h0) / p
    psi_a = T / p
    return ScoreComponents(psi_b=psi_b, psi_a=psi_a)


def components(ctx, nu: NuisanceSet, spec: ScoreSpec) -> ScoreComponents:
    """Dispatch to the kind-specific component builder."""
    kind = spec.kind
    if kind == "ate_dr":
        return ate_dr_components(ctx, nu)
    if kind == "ate_ipw":
        return ate_ipw_components(ctx, nu)
    if kind == "ate_ra":
        return ate_ra_components(ctx, nu)
    if kind == "wapo":
        return wapo_components(ctx, nu, float(spec.options["level"]), spec.options.get("omega"))
    if kind == "att_dr":
        return att_dr_components(ctx, nu)
    if kind == "late_dr":
        return late_dr_components(ctx, nu)
    if kind == "plr":
        return plr_components(ctx, nu)
    if kind == "pliv":
        return pliv_components(ctx, nu)
    if kind == "pliv_flex":
        return pliv_flex_components(ctx, nu)
    if kind == "fe_plr":
        return fe_plr_components(ctx, nu)
    if kind == "gtatt":
        return gtatt_components(ctx, nu)
    raise ValueError(f"unknown score kind '{kind}'")


# ---------------------------------------------------------------------------
# generic orthogonalization


@dataclass(frozen=True)
class Correction:
    """One correction term alpha(B)(A - gamma(B)); ``alpha_theta`` carries a
    theta-proportional part of the adjustment factor, if any."""

    A: np.ndarray
    gamma: np.ndarray
    alpha: np.ndarray
    alpha_theta: np.ndarray | None = None


@dataclass(frozen=True)
class AdjustmentSpec:
    base: ScoreComponents
    corrections: list[Correction] = field(default_factory=list)


def orthogonalize(adj: AdjustmentSpec) -> ScoreComponents:
    """Assemble base components plus correction terms.

    Theta-free parts of each correction are added to psi_b; parts
    proportional to theta enter psi_a with flipped sign (psi is
    psi_b - psi_a * theta).
    """
    psi_b = adj.base.psi_b.copy()
    psi_a = adj.base.psi_a.copy()
    n = psi_b.shape[0]
    for corr in adj.corrections:
        if corr.A.shape[0] != n or corr.gamma.shape[0] != n or corr.alpha.shape[0] != n:
            raise ValidationError("correction arrays misaligned with base score")
        resid = corr.A - corr.gamma
        psi_b += corr.alpha * resid
        if corr.alpha_theta is not None:
            psi_a -= corr.alpha_theta * resid
    return ScoreComponents(psi_b=psi_b, psi_a=psi_a)


# ---------------------------------------------------------------------------
# numerical orthogonality check


@dataclass(frozen=True)
class PerturbSlot:
    """One perturbable nuisance direction for the orthogonality probe."""

    name: str
    kind: str  # 'free' | 'prob' | 'alpha'
    base: np.ndarray
    scale: float
    xbar: np.ndarray


@dataclass(frozen=True)
class OrthogonalityReport:
    lam_grid: np.ndarray
    f_values: np.ndarray
    derivative: float      # central finite difference at the smallest step
    curvature: float       # quadratic coefficient of the least-squares fit
    sd_psi: float
    theta: float

    def passes(self, tol_mult: float = 1e-3) -> bool:
        return abs(self.derivative) < tol_mult * self.sd_psi


def _xbar(X: np.ndarray) -> np.ndarray:
    return X.mean(axis=1) if X.ndim == 2 and X.shape[1] else np.zeros(X.shape[0])


def perturbation_slots(ctx, nu: NuisanceSet, spec: ScoreSpec) -> list[PerturbSlot]:
    kind = spec.kind
    if kind in ("ate_dr", "ate_ipw", "ate_ra", "att_dr", "plr", "wapo", "late_dr",
                "pliv", "pliv_flex"):
        ds: Dataset = ctx
        xb = _xbar(ds.controls_matrix())
        sy = float(np.std(ds.outcome()))
        slots = []
        if kind in ("ate_dr", "ate_ipw"):
            alpha = _alpha_weights(ds.treatment(), nu.v("r"))
            slots.append(PerturbSlot("alpha", "alpha", alpha, 0.0, xb))
        if kind in ("ate_dr", "ate_ra"):
            slots.append(PerturbSlot("ell0", "free", nu.v("ell0"), sy, xb))
            slots.append(PerturbSlot("ell1", "free", nu.v("ell1"), sy, xb))
        if kind == "wapo":
            slots.append(PerturbSlot("elld", "free", nu.v("elld"), sy, xb))
            slots.append(PerturbSlot("rd", "prob", nu.v("rd"), 0.0, xb))
        if kind == "att_dr":
            slots.append(PerturbSlot("ell0", "free", nu.v("ell0"), sy, xb))
            slots.append(PerturbSlot("r", "prob", nu.v("r"), 0.0, xb))
        if kind == "plr":
            sd = float(np.std(ds.treatment()))
            slots.append(PerturbSlot("ell", "free", nu.v("ell"), sy, xb))
            slots.append(PerturbSlot("r", "free", nu.v("r"), sd, xb))
        if kind == "late_dr":
            sd = float(np.std(ds.treatment()))
            slots += [PerturbSlot("mu0", "free", nu.v("mu0"), sy, xb),
                      PerturbSlot("mu1", "free", nu.v("mu1"), sy, xb),
                      PerturbSlot("nu0", "prob", nu.v("nu0"), 0.0, xb),
                      PerturbSlot("nu1", "prob", nu.v("nu1"), 0.0, xb),
                      PerturbSlot("rz", "prob", nu.v("rz"), 0.0, xb)]
        if kind in ("pliv", "pliv_flex"):
            sd = float(np.std(ds.treatment()))
            slots += [PerturbSlot("g1", "free", nu.v("g1"), sy, xb),
                      PerturbSlot("g2", "free", nu.v("g2"), sd, xb)]
            if kind == "pliv":
                sz = float(np.std(ds.instrument()))
                slots.append(PerturbSlot("mz", "free", nu.v("mz"), sz, xb))
            else:
                slots.append(PerturbSlot("g3", "free", nu.v("g3"), sd, xb))
        return slots
    if kind == "fe_plr":
        fe: FePlrContext = ctx
        slots = []
        for ti in range(fe.dy.shape[1]):
            xb = _xbar(fe.features_at(ti))
            slots.append(PerturbSlot(f"g1@{ti}", "free", nu.v(f"g1@{ti}"),
                                     float(np.std(fe.dy[:, ti])), xb))
            slots.append(PerturbSlot(f"g2@{ti}", "free", nu.v(f"g2@{ti}"),
                                     float(np.std(fe.dd[:, ti])), xb))
            if fe.has_instrument:
                slots.append(PerturbSlot(f"mz@{ti}", "free", nu.v(f"mz@{ti}"),
                                         float(np.std(fe.dz[:, ti])), xb))
        return slots
    if kind == "gtatt":
        gt: GtattContext = ctx
        xb = _xbar(gt.X)
        return [PerturbSlot("ell0", "free", nu.v("ell0"), float(np.std(gt.dy)), xb),
                PerturbSlot("h0", "prob", nu.v("h0"), 0.0, xb),
                PerturbSlot("h1", "prob", nu.v("h1"), 0.0, xb)]
    raise ValueError(kind)


def default_deltas(slots: list[PerturbSlot]) -> dict[str, np.ndarray]:
    """Smooth, bounded, reproducible default perturbation directions.

    Slot j gets scale * sin(xbar + j); probability slots use the bounded
    distortion 0.2 * v * (1 - v) * sin(xbar + j); the IPW weight slot is
    perturbed by the weight change induced by a 20% propensity distortion.
    """
    out = {}
    for j, slot in enumerate(slots):
        bump = np.sin(slot.xbar + j)
        if slot.kind == "prob":
            out[slot.name] = 0.2 * slot.base * (1.0 - slot.base) * bump
        elif slot.kind == "alpha":
            out[slot.name] = None  # filled by the caller, needs (D, r)
        else:
            out[slot.name] = slot.scale * bump
    return out


def _alpha_delta(ds: Dataset, r: np.ndarray, j: int) -> np.ndarray:
    xb = _xbar(ds.controls_matrix())
    r_tilde = r + 0.2 * r * (1.0 - r) * np.sin(xb + j)
    D = ds.treatment()
    return _alpha_weights(D, r_tilde) - _alpha_weights(D, r)


def _psi_mean_from_slots(ctx, spec: ScoreSpec, nu: NuisanceSet,
                         values: dict[str, np.ndarray], theta: float) -> float:
    """Mean score with selected nuisances overridden by ``values``.

    For ate_dr / ate_ipw the weight function alpha is a first-class slot
    (the bilinear bias formula perturbs (alpha, ell) directly).
    """
    kind = spec.kind
    if kind in ("ate_dr", "ate_ipw"):
        ds: Dataset = ctx
        Y, D = ds.outcome(), ds.treatment()
        alpha = values["alpha"]
        if kind == "ate_ipw":
            return float(np.mean(alpha * Y)) - theta
        ell0, ell1 = values["ell0"], values["ell1"]
        ell_d = D * ell1 + (1.0 - D) * ell0
        return float(np.mean(alpha * (Y - ell_d) + ell1 - ell0)) - theta
    merged = dict(nu.values)
    merged.update(values)
    comps = components(ctx, NuisanceSet(values=merged, scalars=nu.scalars), spec)
    return float(np.mean(comps.psi(theta)))


def check_orthogonality(spec: ScoreSpec, ds, nu: NuisanceSet,
                        theta: float | None = None,
                        deltas: dict[str, np.ndarray] | None = None,
                        lam_grid=None) -> OrthogonalityReport:
    """Probe d/dlambda E[psi(W; theta, eta + lambda * Delta eta)] at 0.

    Evaluates the mean score along the perturbation path over a symmetric
    lambda grid, reporting a central finite-difference derivative and the
    quadratic coefficient of a least-squares fit (the bilinear-bias
    curvature).  Probability-type nuisances are range-checked before
    evaluation.
    """
    ctx = prepare_context(ds, spec)
    slots = perturbation_slots(ctx, nu, spec)
    if lam_grid is None:
        lam_grid = (-0.2, -0.1, -0.05, 0.0, 0.05, 0.1, 0.2)
    lam_grid = np.asarray(sorted(set(float(l) for l in lam_grid) | {0.0}))
    if not np.allclose(lam_grid + lam_grid[::-1], 0.0):
        raise ValueError("lambda grid must be symmetric around 0")

    if deltas is None:
        deltas = default_deltas(slots)
        for j, slot in enumerate(slots):
            if slot.kind == "alpha":
                deltas[slot.name] = _alpha_delta(ctx, nu.v("r"), j)
    lam_max = float(np.max(np.abs(lam_grid)))
    for slot in slots:
        d = deltas.get(slot.name)
        if d is None:
            deltas[slot.name] = np.zeros_like(slot.base)
            continue
        if slot.kind == "prob":
            for lam in (-lam_max, lam_max):
                v = slot.base + lam * d
                if not np.all((v > 0.0) & (v < 1.0)):
                    raise ValidationError(
                        f"perturbation pushes '{slot.name}' outside (0, 1) at lambda={lam:g}")

    base_values = {s.name: s.base for s in slots}
    if theta is None:
        theta = solve_components(components(ctx, nu, spec))

    f_vals = np.empty(lam_grid.shape[0])
    for i, lam in enumerate(lam_grid):
        values = {name: base + lam * deltas[name] for name, base in base_values.items()}
        f_vals[i] = _psi_mean_from_slots(ctx, spec, nu, values, theta)

    pos = lam_grid[lam_grid > 0]
    h = float(pos.min()) if pos.size else 0.0
    if h > 0:
        fp = f_vals[np.isclose(lam_grid, h)][0]
        fm = f_vals[np.isclose(lam_grid, -h)][0]
        deriv = (fp - fm) / (2.0 * h)
    else:
        deriv = 0.0
    design = np.column_stack([np.ones_like(lam_grid), lam_grid, lam_grid ** 2])
    coef, *_ = np.linalg.lstsq(design, f_vals, rcond=None)
    comps0 = components(ctx, nu, spec)
    sd_psi = float(np.std(comps0.psi(theta)))
    return OrthogonalityReport(lam_grid=lam_grid, f_values=f_vals, derivative=float(deriv),
                               curvature=float(coef[2]), sd_psi=sd_psi, theta=theta)


def solve_components(comps: ScoreComponents) -> float:
    """Closed-form root of the averaged linear score (also in engine)."""
    denom = float(np.sum(comps.psi_a))
    if abs(denom) < 1e-12 * comps.n:
        raise IdentificationError("sum of psi_a is numerically zero")
    return float(np.sum(comps.psi_b)) / denom
