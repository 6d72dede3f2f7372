"""Sample-enumeration forecasting under policy scenarios.

Each individual's class distribution is filtered up to their last observed
wave and then pushed through the transition model one future wave at a
time.  The future choice environment is the individual's last observed
situations and covariates, carried forward and modified by the scenario's
transforms; the per-class surplus is recomputed from the transformed
attributes each wave, so level-of-service policies feed back into class
membership.  Population shares are unweighted means over individuals.

A static single-wave mixture (class membership plus the same fixed choice
kernel, no state dependence) is provided as the comparison baseline; its
forecasts reapply the membership model under each future wave's transformed
environment.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .design import build_design, effective_row_mask, segment_logsumexp
from .hmm import dataset_posteriors, _raise_dead
from .model import ModelSpec, ParameterSet, SpecError, softplus, softplus_inv
from .panel import PanelDataset


@dataclass(frozen=True)
class CovariateTransform:
    covariate: str
    op: str                       # "scale" | "shift"
    value: float
    waves: tuple[int, ...] | None = None   # absolute wave indices; None = all


@dataclass(frozen=True)
class AttributeTransform:
    attribute: str
    alternatives: tuple[str, ...]
    op: str
    value: float
    waves: tuple[int, ...] | None = None


@dataclass(frozen=True)
class Scenario:
    name: str
    covariate_transforms: tuple[CovariateTransform, ...] = ()
    attribute_transforms: tuple[AttributeTransform, ...] = ()


def identity_scenario(name: str = "baseline") -> Scenario:
    return Scenario(name)


def _check_transform(op: str, value: float, where: str):
    if op not in ("scale", "shift"):
        raise SpecError(f"{where}: op must be 'scale' or 'shift', got {op!r}")
    if op == "scale" and value <= 0:
        raise SpecError(f"{where}: scale factors must be positive")


def validate_scenario(scenario: Scenario, spec: ModelSpec, mode_universe):
    """Reject references to unknown schema entries before any computation."""
    for tr in scenario.covariate_transforms:
        if tr.covariate not in spec.covariates:
            raise SpecError(
                f"scenario {scenario.name!r}: unknown covariate {tr.covariate!r}"
            )
        _check_transform(tr.op, tr.value, f"scenario {scenario.name!r}")
    for tr in scenario.attribute_transforms:
        if tr.attribute not in spec.attributes:
            raise SpecError(
                f"scenario {scenario.name!r}: unknown attribute {tr.attribute!r}"
            )
        for alt in tr.alternatives:
            if alt not in mode_universe:
                raise SpecError(
                    f"scenario {scenario.name!r}: unknown alternative {alt!r}"
                )
        _check_transform(tr.op, tr.value, f"scenario {scenario.name!r}")


def scenario_from_json(doc: dict) -> Scenario:
    return Scenario(
        name=doc.get("name", "scenario"),
        covariate_transforms=tuple(
            CovariateTransform(
                covariate=d["covariate"],
                op=d["op"],
                value=float(d["value"]),
                waves=tuple(d["waves"]) if d.get("waves") is not None else None,
            )
            for d in doc.get("covariate_transforms", [])
        ),
        attribute_transforms=tuple(
            AttributeTransform(
                attribute=d["attribute"],
                alternatives=tuple(d["alternatives"]),
                op=d["op"],
                value=float(d["value"]),
                waves=tuple(d["waves"]) if d.get("waves") is not None else None,
            )
            for d in doc.get("attribute_transforms", [])
        ),
    )


def scenario_to_json(scenario: Scenario) -> dict:
    return {
        "name": scenario.name,
        "covariate_transforms": [
            {"covariate": t.covariate, "op": t.op, "value": t.value,
             "waves": list(t.waves) if t.waves is not None else None}
            for t in scenario.covariate_transforms
        ],
        "attribute_transforms": [
            {"attribute": t.attribute, "alternatives": list(t.alternatives),
             "op": t.op, "value": t.value,
             "waves": list(t.waves) if t.waves is not None else None}
            for t in scenario.attribute_transforms
        ],
    }


@dataclass
class ForecastResult:
    """Shares per wave, starting at the last observed wave (index 0 = now)."""

    waves: list[int]
    class_names: list[str]
    class_shares: np.ndarray            # (H+1, S)
    mode_shares: list[dict[str, float]]  # one dict per wave
    per_individual: np.ndarray          # (H+1, N, S)
    average_transition: np.ndarray | None
    person_ids: tuple[str, ...] = ()


# ---------------------------------------------------------------------------
# The carried-forward future environment


@dataclass
class _FutureFrame:
    """Last observed situations and covariates, flattened for reuse."""

    X0: np.ndarray          # (m, n_attr) base attributes
    row_alt: np.ndarray
    seg: np.ndarray         # situation index per row
    starts: np.ndarray
    sit_person: np.ndarray
    K: np.ndarray           # (N,) situations per person
    base_cov: np.ndarray    # (N, n_model_cov) aligned with spec.covariates
    alt_names: tuple[str, ...]
    n_alts: int


def _future_frame(ds: PanelDataset, spec: ModelSpec) -> _FutureFrame:
    alt_names = tuple(ds.mode_universe)
    alt_code = {a: i for i, a in enumerate(alt_names)}
    cov_pos = {c: i for i, c in enumerate(ds.covariate_schema)}
    sel = [cov_pos[c] for c in spec.covariates]
    X_rows, row_alt, seg, sit_person, starts = [], [], [], [], [0]
    base_cov = np.zeros((ds.n_individuals, len(sel)))
    sit_id = 0
    for n, rec in enumerate(ds.individuals):
        wave = rec.waves[-1]
        base_cov[n] = np.asarray(wave.covariates)[sel]
        for sit in wave.situations:
            for alt in sit.alternatives:
                if alt.alt_id not in sit.availability:
                    continue
                X_rows.append(alt.attributes)
                row_alt.append(alt_code[alt.alt_id])
                seg.append(sit_id)
            sit_person.append(n)
            starts.append(len(row_alt))
            sit_id += 1
    K = np.bincount(sit_person, minlength=ds.n_individuals).astype(float)
    return _FutureFrame(
        X0=np.asarray(X_rows, dtype=float).reshape(len(row_alt), len(ds.attribute_schema)),
        row_alt=np.asarray(row_alt, dtype=np.int64),
        seg=np.asarray(seg, dtype=np.int64),
        starts=np.asarray(starts, dtype=np.int64),
        sit_person=np.asarray(sit_person, dtype=np.int64),
        K=K,
        base_cov=base_cov,
        alt_names=alt_names,
        n_alts=len(alt_names),
    )


def _applies(waves: tuple[int, ...] | None, wave: int | None) -> bool:
    if wave is None:
        return waves is None
    return waves is None or wave in waves


def _transformed_attrs(frame: _FutureFrame, spec: ModelSpec, scenario: Scenario,
                       wave: int | None) -> np.ndarray:
    X = frame.X0.copy()
    for tr in scenario.attribute_transforms:
        if not _applies(tr.waves, wave):
            continue
        j = spec.attributes.index(tr.attribute)
        mask = np.isin(frame.row_alt,
                       [frame.alt_names.index(a) for a in tr.alternatives])
        if tr.op == "scale":
            X[mask, j] *= tr.value
        else:
            X[mask, j] += tr.value
    return X


def _transformed_covs(frame: _FutureFrame, spec: ModelSpec, scenario: Scenario,
                      wave: int | None) -> np.ndarray:
    C = frame.base_cov.copy()
    for tr in scenario.covariate_transforms:
        if not _applies(tr.waves, wave):
            continue
        j = spec.covariates.index(tr.covariate)
        if tr.op == "scale":
            C[:, j] *= tr.value
        else:
            C[:, j] += tr.value
    return C


def _class_environment(frame: _FutureFrame, spec: ModelSpec, params: ParameterSet,
                       X: np.ndarray):
    """Surplus (N, S) and per-class mode distributions (S, N, n_alts)."""
    N = len(frame.K)
    S = spec.n_classes
    cs = np.empty((N, S))
    modes = np.zeros((S, N, frame.n_alts))
    in_set = np.zeros((S, frame.n_alts), dtype=bool)
    for s, cls in enumerate(spec.classes):
        for a in cls.consideration_set:
            in_set[s, frame.alt_names.index(a)] = True
    for s, (cls, taste) in enumerate(zip(spec.classes, params.class_tastes)):
        asc_vec = np.zeros(frame.n_alts)
        for alt, v in taste.asc.items():
            asc_vec[frame.alt_names.index(alt)] = v
        V = asc_vec[frame.row_alt] + X @ taste.coeffs
        V = np.where(in_set[s][frame.row_alt], V, -np.inf)
        lse = segment_logsumexp(V, frame.starts, frame.seg)
        cs[:, s] = np.bincount(frame.sit_person, weights=lse, minlength=N) / frame.K
        with np.errstate(invalid="ignore"):
            p = np.exp(V - lse[frame.seg])
        p = np.where(np.isfinite(V), p, 0.0)
        per_row_w = p / frame.K[frame.sit_person[frame.seg]]
        key = frame.sit_person[frame.seg] * frame.n_alts + frame.row_alt
        modes[s] = np.bincount(key, weights=per_row_w,
                               minlength=N * frame.n_alts).reshape(N, frame.n_alts)
    return cs, modes


def _transition_tensor(Z: np.ndarray, cs: np.ndarray, params: ParameterSet) -> np.ndarray:
    """(N, S, S) per-person transition matrices from covariates and surplus."""
    u = np.einsum("np,rsp->nrs", Z, params.trans.gamma)
    neg = np.isneginf(cs)
    safe = np.where(neg, 0.0, cs)
    term = params.trans.alpha[None] * safe[:, None, :]
    term = np.where(neg[:, None, :] & (params.trans.alpha[None] > 0), -np.inf, term)
    u = u + term
    m = u.max(axis=2, keepdims=True)
    e = np.exp(u - np.where(np.isfinite(m), m, 0.0))
    return e / e.sum(axis=2, keepdims=True)


def _with_intercept(C: np.ndarray, spec: ModelSpec, names) -> np.ndarray:
    sel = [spec.covariates.index(c) for c in names]
    return np.hstack([np.ones((len(C), 1)), C[:, sel]])


def forecast(dataset: PanelDataset, spec: ModelSpec, params: ParameterSet,
             horizon: int, scenario: Scenario | None = None,
             initial_distributions: np.ndarray | None = None) -> ForecastResult:
    """Propagate filtered class distributions through future waves.

    Row 0 of the result reflects the last observed wave; each further row
    applies the scenario's transforms for that absolute wave index,
    recomputes per-class surplus, advances every individual's distribution
    through their transition matrix, and mixes class-conditional choice
    probabilities into expected mode shares.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    scenario = scenario or identity_scenario()
    validate_scenario(scenario, spec, dataset.mode_universe)

    frame = _future_frame(dataset, spec)
    N = dataset.n_individuals
    S = spec.n_classes
    base_wave = max(w.wave_index for rec in dataset.individuals for w in rec.waves)

    if initial_distributions is not None:
        dist = np.asarray(initial_distributions, dtype=float).copy()
        if dist.shape != (N, S):
            raise ValueError(f"initial distributions must have shape {(N, S)}")
    else:
        design = build_design(dataset, spec)
        _, filtered, _, _, dead, _, _ = dataset_posteriors(design, spec, params)
        _raise_dead(design, dead)
        dist = filtered[np.arange(N), design.lengths - 1]
        if design.lengths.min() < base_wave:
            # individuals observed short of the panel's last wave are advanced
            # scenario-free to the common origin
            cs0, _ = _class_environment(frame, spec, params, frame.X0)
            Z0 = _with_intercept(frame.base_cov, spec, spec.trans_covariates)
            A0 = _transition_tensor(Z0, cs0, params)
            for gap_t in range(int(design.lengths.min()), base_wave):
                behind = design.lengths <= gap_t
                stepped = np.einsum("nr,nrs->ns", dist, A0)
                dist[behind] = stepped[behind]

    waves = [base_wave]
    per_ind = [dist.copy()]
    cls_shares = [dist.mean(axis=0)]
    cs_now, modes_now = _class_environment(frame, spec, params,
                                           _transformed_attrs(frame, spec, identity_scenario(), None))
    mode_shares = [_mix_mode_shares(dist, modes_now, frame.alt_names)]

    num = np.zeros((S, S))
    den = np.zeros(S)
    for h in range(1, horizon + 1):
        w = base_wave + h
        X = _transformed_attrs(frame, spec, scenario, w)
        C = _transformed_covs(frame, spec, scenario, w)
        cs, modes = _class_environment(frame, spec, params, X)
        Z = _with_intercept(C, spec, spec.trans_covariates)
        A = _transition_tensor(Z, cs, params)
        num += np.einsum("nr,nrs->rs", dist, A)
        den += dist.sum(axis=0)
        dist = np.einsum("nr,nrs->ns", dist, A)
        waves.append(w)
        per_ind.append(dist.copy())
        cls_shares.append(dist.mean(axis=0))
        mode_shares.append(_mix_mode_shares(dist, modes, frame.alt_names))

    avg_trans = (num / den[:, None]) if horizon > 0 else None
    return ForecastResult(
        waves=waves,
        class_names=[c.name for c in spec.classes],
        class_shares=np.asarray(cls_shares),
        mode_shares=mode_shares,
        per_individual=np.asarray(per_ind),
        average_transition=avg_trans,
        person_ids=tuple(r.person_id for r in dataset.individuals),
    )


def _mix_mode_shares(dist: np.ndarray, modes: np.ndarray, alt_names) -> dict[str, float]:
    # modes: (S, N, n_alts); dist: (N, S)
    mixed = np.einsum("ns,sna->a", dist, modes) / dist.shape[0]
    return {a: float(v) for a, v in zip(alt_names, mixed)}


# ---------------------------------------------------------------------------
# Sample-enumeration summaries of a fitted model


def estimated_class_shares(dataset: PanelDataset, spec: ModelSpec,
                           params: ParameterSet) -> tuple[list[int], np.ndarray]:
    """Mean smoothed class membership per observed wave."""
    design = build_design(dataset, spec)
    _, _, smoothed, _, dead, _, _ = dataset_posteriors(design, spec, params)
    _raise_dead(design, dead)
    counts = (np.arange(design.n_waves_max)[None, :] < design.lengths[:, None]).sum(axis=0)
    shares = smoothed.sum(axis=0) / counts[:, None]
    return list(range(1, design.n_waves_max + 1)), shares


def average_transition_probs(dataset: PanelDataset, spec: ModelSpec,
                             params: ParameterSet) -> np.ndarray:
    """Posterior-weighted mean of per-individual transition matrices."""
    from .hmm import log_transition_tensor

    design = build_design(dataset, spec)
    _, _, smoothed, _, dead, logE, cs = dataset_posteriors(design, spec, params)
    _raise_dead(design, dead)
    if design.n_waves_max < 2:
        raise ValueError("need at least two waves to average transitions")
    A = np.exp(log_transition_tensor(design, cs, params.trans))
    w = smoothed[:, :-1, :]                      # weight on the origin state
    num = np.einsum("ntr,ntrs->rs", w, A)
    den = w.sum(axis=(0, 1))
    return num / den[:, None]


# ---------------------------------------------------------------------------
# Static single-wave mixture baseline


@dataclass
class LccmParams:
    """Membership logit of the static baseline (tastes are fixed)."""

    lam: np.ndarray     # (S, 1 + p_init), row 0 zero
    alpha: np.ndarray   # (S,) nonnegative own-surplus loadings


def lccm_fit_and_forecast(dataset: PanelDataset, spec: ModelSpec,
                          class_tastes, horizon: int,
                          scenario: Scenario | None = None,
                          base_wave: int | None = None,
                          tol: float = 1e-6, max_iter: int = 500):
    """Fit the static mixture on a one-wave panel and forecast by reapplying
    its membership model under each future wave's environment.

    ``class_tastes`` (typically the dynamic model's fitted values) stay
    fixed; only membership parameters move.  Surplus terms enter membership
    when ``spec.use_cs`` is set.  Since the model has no state dependence, a
    scenario with no transforms yields a constant forecast.

    Returns (LccmParams, ForecastResult).
    """
    if any(len(rec.waves) != 1 for rec in dataset.individuals):
        raise ValueError("the static baseline expects a single-wave panel; "
                         "restrict with panel.select_wave first")
    scenario = scenario or identity_scenario()
    validate_scenario(scenario, spec, dataset.mode_universe)
    params = ParameterSet(tuple(t.copy() for t in class_tastes),
                          _zero_init(spec), _zero_trans(spec))

    design = build_design(dataset, spec)
    from .choice import all_class_wave_terms

    logE, _ = all_class_wave_terms(design, spec, params)
    logE = logE[:, 0, :]                         # (N, S)
    frame = _future_frame(dataset, spec)
    cs_obs, _ = _class_environment(frame, spec, params, frame.X0)
    Zi = _with_intercept(frame.base_cov, spec, spec.init_covariates)
    N, S = logE.shape
    use_cs = spec.use_cs
    p_init = Zi.shape[1]

    def split(x):
        lam = np.zeros((S, p_init))
        lam[1:] = x[: (S - 1) * p_init].reshape(S - 1, p_init)
        a = softplus(x[(S - 1) * p_init:]) if use_cs else np.zeros(S)
        return lam, a

    def membership(lam, a, Z, cs):
        u = Z @ lam.T
        if use_cs:
            neg = np.isneginf(cs)
            u = u + np.where(neg & (a[None, :] > 0), -np.inf,
                             a[None, :] * np.where(neg, 0.0, cs))
        m = u.max(axis=1, keepdims=True)
        e = np.exp(u - np.where(np.isfinite(m), m, 0.0))
        return e / e.sum(axis=1, keepdims=True)

    def objective(x):
        lam, a = split(x)
        P = membership(lam, a, Zi, cs_obs)
        with np.errstate(divide="ignore"):
            joint = np.log(P) + logE
        m = joint.max(axis=1)
        safe = np.where(np.isfinite(m), m, 0.0)
        ll_n = safe + np.log(np.exp(joint - safe[:, None]).sum(axis=1))
        if not np.all(np.isfinite(ll_n)):
            return np.inf, np.zeros_like(x)
        w = np.exp(joint - ll_n[:, None])        # posterior membership
        resid = w - P
        g_lam = resid.T @ Zi                     # (S, p)
        g = [g_lam[1:].ravel()]
        if use_cs:
            cs_safe = np.where(np.isneginf(cs_obs), 0.0, cs_obs)
            g_a = (resid * cs_safe).sum(axis=0)
            g.append(g_a * expit(x[(S - 1) * p_init:]))
        grad = np.concatenate(g)
        return -float(ll_n.sum()), -grad

    n_x = (S - 1) * p_init + (S if use_cs else 0)
    x0 = np.zeros(n_x)
    if use_cs:
        x0[(S - 1) * p_init:] = softplus_inv(0.01)
    f0, _ = objective(x0)
    if not np.isfinite(f0):
        raise ValueError("the fixed choice kernel assigns zero probability to "
                         "some individual's wave under every class")
    result = minimize(objective, x0, jac=True, method="L-BFGS-B",
                      options={"maxiter": max_iter, "gtol": tol, "ftol": 1e-14})
    lam, a = split(result.x)
    fitted = LccmParams(lam, a)

    base = base_wave if base_wave is not None else max(
        w.wave_index for rec in dataset.individuals for w in rec.waves
    )
    waves = [base]
    dist = membership(lam, a, Zi, cs_obs)
    per_ind = [dist.copy()]
    cls_shares = [dist.mean(axis=0)]
    _, modes_now = _class_environment(frame, spec, params, frame.X0)
    mode_shares = [_mix_mode_shares(dist, modes_now, frame.alt_names)]
    for h in range(1, horizon + 1):
        w = base + h
        X = _transformed_attrs(frame, spec, scenario, w)
        C = _transformed_covs(frame, spec, scenario, w)
        cs, modes = _class_environment(frame, spec, params, X)
        Z = _with_intercept(C, spec, spec.init_covariates)
        dist = membership(lam, a, Z, cs)
        waves.append(w)
        per_ind.append(dist.copy())
        cls_shares.append(dist.mean(axis=0))
        mode_shares.append(_mix_mode_shares(dist, modes, frame.alt_names))
    result_fc = ForecastResult(
        waves=waves,
        class_names=[c.name for c in spec.classes],
        class_shares=np.asarray(cls_shares),
        mode_shares=mode_shares,
        per_individual=np.asarray(per_ind),
        average_transition=None,
        person_ids=tuple(r.person_id for r in dataset.individuals),
    )
    return fitted, result_fc


def _zero_init(spec: ModelSpec):
    from .model import InitParams

    return InitParams(np.zeros((spec.n_classes, 1 + len(spec.init_covariates))))


def _zero_trans(spec: ModelSpec):
    from .model import TransParams

    S = spec.n_classes
    return TransParams(np.zeros((S, S, 1 + len(spec.trans_covariates))), np.zeros((S, S)))


# ---------------------------------------------------------------------------
# Tidy CSV emission


def write_class_shares_csv(result: ForecastResult, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["wave", "class", "share"])
        for w, row in zip(result.waves, result.class_shares):
            for name, v in zip(result.class_names, row):
                writer.writerow([w, name, repr(float(v))])


def write_mode_shares_csv(result: ForecastResult, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["wave", "mode", "share"])
        for w, row in zip(result.waves, result.mode_shares):
            for name, v in row.items():
                writer.writerow([w, name, repr(float(v))])
