"""Maximum likelihood estimation.

Two fitters share the likelihood machinery:

* :func:`em_fit` — expectation-maximization for the separable model (no
  surplus feedback).  The E-step computes smoothed and pairwise state
  posteriors; the M-step splits into independent weighted multinomial
  logit problems (per-class tastes, initialization, per-origin transition),
  each solved by Newton iterations with step halving.  The observed-data
  log-likelihood is non-decreasing across iterations.
* :func:`gradient_fit` — quasi-Newton (L-BFGS-B) ascent of the full
  likelihood, required once surplus loadings are free because the taste
  parameters then enter the transition model through the logsum and the
  M-step no longer separates.  Loadings are kept nonnegative by optimizing
  their softplus preimage.  The analytic gradient comes from the identity
  that the score equals the posterior-expected complete-data score.

:func:`multi_start` wraps either fitter with seeded random restarts and a
canonical relabeling (classes ordered by descending first-wave share) so
that label-switched optima compare equal.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .design import PanelDesign, build_design, effective_row_mask, segment_logsumexp
from .hmm import dataset_posteriors, log_init_probs, _raise_dead
from .model import (
    FreeCell,
    ModelSpec,
    ParameterSet,
    SpecError,
    free_cells,
    n_free_params,
    pack,
    softplus,
    unpack,
    validate_params,
    zero_params,
)
from .panel import PanelDataset


class EstimationError(RuntimeError):
    pass


@dataclass
class FitOptions:
    """Knobs shared by both fitters; ``None`` picks the method default.

    EM stops when the absolute log-likelihood improvement falls below
    ``tol`` (default 1e-6, at most 2000 iterations); the gradient fitter
    stops when the gradient infinity norm falls below ``tol`` (default
    1e-5, at most 1000 iterations).
    """

    tol: float | None = None
    max_iter: int | None = None
    seed: int = 0
    n_threads: int = 1
    accelerate: bool = True
    verify_gradient: bool = False
    verbose: bool = False


@dataclass
class FitReport:
    log_likelihood: float
    n_parameters: int
    n_observations: int
    null_log_likelihood: float
    rho_bar_squared: float
    aic: float
    bic: float
    iterations: int
    converged: bool
    method: str
    ll_trace: list[float] = field(default_factory=list)
    grad_inf_norm: float | None = None
    message: str = ""

    def to_json(self) -> dict:
        return {
            "log_likelihood": self.log_likelihood,
            "n_parameters": self.n_parameters,
            "n_observations": self.n_observations,
            "null_log_likelihood": self.null_log_likelihood,
            "rho_bar_squared": self.rho_bar_squared,
            "aic": self.aic,
            "bic": self.bic,
            "iterations": self.iterations,
            "converged": self.converged,
            "method": self.method,
            "grad_inf_norm": self.grad_inf_norm,
            "message": self.message,
            "null_model": "equal probability over each situation's available set",
        }


def null_log_likelihood(design: PanelDesign) -> float:
    """Equal-probability-over-available-alternatives benchmark."""
    return float(-np.log(design.sit_navail).sum())


def fit_metrics(log_likelihood: float, n_parameters: int, n_observations: int,
                null_loglik: float) -> dict:
    """AIC, BIC and adjusted likelihood ratio index.

    rho_bar_squared = 1 - (LL - K) / LL0 against the stated null; the null
    convention is reported alongside results because no single standard
    exists.
    """
    if n_observations < 1:
        raise ValueError("n_observations must be >= 1")
    if null_loglik == 0:
        raise ValueError("null log-likelihood of 0 leaves the ratio index undefined")
    return {
        "aic": 2.0 * n_parameters - 2.0 * log_likelihood,
        "bic": n_parameters * math.log(n_observations) - 2.0 * log_likelihood,
        "rho_bar_squared": 1.0 - (log_likelihood - n_parameters) / null_loglik,
    }


def _make_report(method, ll, spec, design, iterations, converged, trace,
                 grad_inf_norm=None, message="") -> FitReport:
    K = n_free_params(spec)
    n_obs = design.n_sit
    ll0 = null_log_likelihood(design)
    m = fit_metrics(ll, K, n_obs, ll0)
    return FitReport(
        log_likelihood=ll,
        n_parameters=K,
        n_observations=n_obs,
        null_log_likelihood=ll0,
        rho_bar_squared=m["rho_bar_squared"],
        aic=m["aic"],
        bic=m["bic"],
        iterations=iterations,
        converged=converged,
        method=method,
        ll_trace=list(trace),
        grad_inf_norm=grad_inf_norm,
        message=message,
    )


# ---------------------------------------------------------------------------
# Per-class compact design (effective rows only) for taste updates


@dataclass
class ClassDesign:
    cells: list[FreeCell]
    F: np.ndarray           # (m, d) free-parameter features
    offset: np.ndarray      # (m,) contribution of fixed cells
    starts: np.ndarray      # (n_c + 1,)
    seg: np.ndarray         # (m,)
    chosen_pos: np.ndarray  # (n_c,) compact row of the chosen alt, -1 if outside
    sit_person: np.ndarray
    sit_wave: np.ndarray
    K_wave: np.ndarray      # (n_c,) situations in the sit's wave

    @property
    def d(self) -> int:
        return self.F.shape[1]


def build_class_design(design: PanelDesign, spec: ModelSpec, s: int) -> ClassDesign:
    cls = spec.classes[s]
    eff = effective_row_mask(design, cls.consideration_set)
    keep_sit = np.add.reduceat(eff.astype(np.int64), design.sit_starts[:-1]) > 0
    sit_ids = np.flatnonzero(keep_sit)
    keep_row = eff & keep_sit[design.row_sit]
    rows = np.flatnonzero(keep_row)

    new_seg_of_sit = -np.ones(design.n_sit, dtype=np.int64)
    new_seg_of_sit[sit_ids] = np.arange(len(sit_ids))
    seg = new_seg_of_sit[design.row_sit[rows]]
    starts = np.zeros(len(sit_ids) + 1, dtype=np.int64)
    np.add.at(starts, seg + 1, 1)
    starts = np.cumsum(starts)

    cells = [c for c in free_cells(spec)
             if c.block in ("asc", "coef") and c.idx[0] == s]
    F = np.zeros((len(rows), len(cells)))
    row_alt = design.row_alt[rows]
    for j, c in enumerate(cells):
        if c.block == "asc":
            F[:, j] = row_alt == design.alt_names.index(c.idx[1])
        else:
            F[:, j] = design.X[rows, c.idx[1]]

    offset = np.zeros(len(rows))
    for alt, v in cls.asc_fixed.items():
        offset[row_alt == design.alt_names.index(alt)] += v
    for attr, v in cls.coef_fixed.items():
        offset += v * design.X[rows, spec.attributes.index(attr)]

    chosen_pos = np.full(len(sit_ids), -1, dtype=np.int64)
    compact_of_row = -np.ones(len(design.row_alt), dtype=np.int64)
    compact_of_row[rows] = np.arange(len(rows))
    cp = compact_of_row[design.chosen_row[sit_ids]]
    chosen_pos[:] = cp

    sp = design.sit_person[sit_ids]
    sw = design.sit_wave[sit_ids]
    return ClassDesign(
        cells=cells,
        F=F,
        offset=offset,
        starts=starts,
        seg=seg,
        chosen_pos=chosen_pos,
        sit_person=sp,
        sit_wave=sw,
        K_wave=design.n_sit_per_wave[sp, sw],
    )


def _class_theta(params: ParameterSet, cd: ClassDesign) -> np.ndarray:
    out = np.empty(cd.d)
    for j, c in enumerate(cd.cells):
        if c.block == "asc":
            out[j] = params.class_tastes[c.idx[0]].asc[c.idx[1]]
        else:
            out[j] = params.class_tastes[c.idx[0]].coeffs[c.idx[1]]
    return out


def _set_class_theta(params: ParameterSet, cd: ClassDesign, theta: np.ndarray):
    for j, c in enumerate(cd.cells):
        if c.block == "asc":
            params.class_tastes[c.idx[0]].asc[c.idx[1]] = float(theta[j])
        else:
            params.class_tastes[c.idx[0]].coeffs[c.idx[1]] = float(theta[j])


def _mnl_eval(cd: ClassDesign, theta: np.ndarray):
    V = cd.F @ theta + cd.offset
    lse = segment_logsumexp(V, cd.starts, cd.seg)
    P = np.exp(V - lse[cd.seg])
    return V, lse, P


def _weighted_mnl_q(cd: ClassDesign, theta, w):
    V, lse, _ = _mnl_eval(cd, theta)
    safe_idx = np.maximum(cd.chosen_pos, 0)
    ok = cd.chosen_pos >= 0
    return float(np.sum(w * ok * (V[safe_idx] - lse)))


def weighted_mnl_newton(cd: ClassDesign, w: np.ndarray, theta0: np.ndarray,
                        tol: float = 1e-8, max_iter: int = 100) -> np.ndarray:
    """Maximize the w-weighted choice log-likelihood over free taste cells.

    The objective is concave; Newton with step halving converges globally.
    Situations whose chosen alternative is outside the class are skipped
    (their weight is zero whenever posteriors are consistent).
    """
    if cd.d == 0:
        return theta0
    ok = cd.chosen_pos >= 0
    w = np.asarray(w, dtype=float) * ok
    if w.sum() <= 0:
        return theta0
    theta = theta0.copy()
    q = _weighted_mnl_q(cd, theta, w)
    safe_idx = np.maximum(cd.chosen_pos, 0)
    w_row = None
    for _ in range(max_iter):
        V, lse, P = _mnl_eval(cd, theta)
        w_row = w[cd.seg]
        grad = cd.F[safe_idx].T @ w - cd.F.T @ (P * w_row)
        if np.abs(grad).max() < tol:
            break
        M = np.add.reduceat((P[:, None] * cd.F), cd.starts[:-1], axis=0)
        H = -(cd.F.T @ (cd.F * (P * w_row)[:, None]) - (M * w[:, None]).T @ M)
        try:
            step = np.linalg.solve(-H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-H, grad, rcond=None)[0]
        scale = 1.0
        for _ in range(50):
            cand = theta + scale * step
            q_new = _weighted_mnl_q(cd, cand, w)
            if q_new >= q - 1e-12:
                theta, q = cand, q_new
                break
            scale *= 0.5
        else:
            break
    return theta


# ---------------------------------------------------------------------------
# Soft-label multinomial logistic regression (init and transition M-steps)


def _soft_mnl_fit(Z: np.ndarray, R: np.ndarray, B0: np.ndarray,
                  free_idx: list[tuple[int, int]],
                  tol: float = 1e-8, max_iter: int = 100) -> np.ndarray:
    """Maximize sum_n sum_s R[n,s] log softmax_s(Z[n] @ B[s]) over free cells.

    ``B0`` supplies fixed cells (including the all-zero reference row 0);
    rows of ``R`` need not be normalized, only nonnegative.
    """
    if not free_idx:
        return B0
    B = B0.copy()
    wn = R.sum(axis=1)

    def eval_q(Bm):
        U = Z @ Bm.T
        U = U - U.max(axis=1, keepdims=True)
        logP = U - np.log(np.exp(U).sum(axis=1, keepdims=True))
        return float(np.sum(R * logP)), np.exp(logP)

    q, P = eval_q(B)
    for _ in range(max_iter):
        G = (R - wn[:, None] * P).T @ Z  # (S, p)
        g = np.array([G[s, j] for s, j in free_idx])
        if np.abs(g).max() < tol:
            break
        d = len(free_idx)
        H = np.empty((d, d))
        for a, (s1, j1) in enumerate(free_idx):
            for b, (s2, j2) in enumerate(free_idx):
                wss = wn * P[:, s1] * ((s1 == s2) - P[:, s2])
                H[a, b] = -np.sum(wss * Z[:, j1] * Z[:, j2])
        try:
            step = np.linalg.solve(-H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-H, g, rcond=None)[0]
        scale = 1.0
        for _ in range(50):
            cand = B.copy()
            for v, (s, j) in zip(step, free_idx):
                cand[s, j] += scale * v
            q_new, P_new = eval_q(cand)
            if q_new >= q - 1e-12:
                B, q, P = cand, q_new, P_new
                break
            scale *= 0.5
        else:
            break
    return B


def _init_free_idx(spec: ModelSpec) -> list[tuple[int, int]]:
    terms = spec.init_terms()
    return [
        (s, j)
        for s in range(1, spec.n_classes)
        for j, t in enumerate(terms)
        if (s, t) not in spec.tau_fixed
    ]


def _trans_free_idx(spec: ModelSpec, r: int) -> list[tuple[int, int]]:
    terms = spec.trans_terms()
    return [
        (s, j)
        for s in range(1, spec.n_classes)
        for j, t in enumerate(terms)
        if (r, s, t) not in spec.gamma_fixed
    ]


# ---------------------------------------------------------------------------
# EM


def em_separable(spec: ModelSpec) -> bool:
    """True when surplus loadings are all pinned to zero."""
    if not spec.use_cs:
        return True
    S = spec.n_classes
    return all(
        spec.alpha_is_fixed(r, s) and spec.alpha_fixed_value(r, s) == 0.0
        for r in range(S)
        for s in range(S)
    )


class _EmEngine:
    """One E-step plus the three independent M-step solvers."""

    def __init__(self, design: PanelDesign, spec: ModelSpec, options: FitOptions):
        self.design = design
        self.spec = spec
        self.options = options
        self.class_designs = [build_class_design(design, spec, s)
                              for s in range(spec.n_classes)]
        self.init_idx = _init_free_idx(spec)
        self.trans_idx = [_trans_free_idx(spec, r) for r in range(spec.n_classes)]
        self.Zt = design.Z_trans[:, 1:].reshape(-1, design.Z_trans.shape[2])

    def posteriors(self, params: ParameterSet):
        out = dataset_posteriors(self.design, self.spec, params,
                                 self.options.n_threads)
        _raise_dead(self.design, out[4])
        return out

    def loglik(self, params: ParameterSet):
        out = self.posteriors(params)
        return float(out[0].sum()), out

    def step(self, params: ParameterSet, post=None) -> tuple[ParameterSet, float]:
        """One EM cycle; returns the updated parameters and LL at the input."""
        lm, filtered, smoothed, pairwise, dead, logE, cs = (
            post if post is not None else self.posteriors(params)
        )
        ll = float(lm.sum())
        weight_per_class = smoothed.sum(axis=(0, 1))
        tiny = weight_per_class < 1e-8 * max(weight_per_class.sum(), 1.0)
        for s in np.flatnonzero(tiny):
            warnings.warn(
                f"class {self.spec.classes[s].name!r} has near-zero posterior "
                "weight; the fit is degenerate, restart from a different seed",
                RuntimeWarning,
            )
        new = params.copy()
        for s, cd in enumerate(self.class_designs):
            w = smoothed[cd.sit_person, cd.sit_wave, s]
            theta = weighted_mnl_newton(cd, w, _class_theta(new, cd))
            _set_class_theta(new, cd, theta)
        new.init.tau = _soft_mnl_fit(self.design.Z_init, smoothed[:, 0, :],
                                     new.init.tau, self.init_idx)
        if self.design.n_waves_max > 1:
            for r in range(self.spec.n_classes):
                R = pairwise[:, :, r, :].reshape(-1, self.spec.n_classes)
                new.trans.gamma[r] = _soft_mnl_fit(
                    self.Zt, R, new.trans.gamma[r], self.trans_idx[r]
                )
        return new, ll


def em_fit(dataset: PanelDataset, spec: ModelSpec,
           init_guess: ParameterSet | None = None,
           options: FitOptions | None = None) -> tuple[ParameterSet, FitReport]:
    """Expectation-maximization fit of the separable model.

    Requires every surplus loading fixed at zero; with feedback the taste
    parameters couple the emission and transition blocks and the M-step no
    longer separates (use :func:`gradient_fit`).

    By default the EM map is accelerated with a squared-extrapolation step
    (two EM cycles, extrapolate through parameter space, fall back to the
    plain EM iterate whenever the extrapolation does not improve the
    likelihood), so the recorded log-likelihood trace stays non-decreasing
    while convergence on slowly mixing problems needs far fewer cycles.
    Set ``options.accelerate = False`` for the textbook iteration.
    """
    if not em_separable(spec):
        raise EstimationError(
            "EM requires the separable model: free (or nonzero) consumer-surplus "
            "loadings couple the taste parameters into the transition model; "
            "use gradient_fit instead"
        )
    options = options or FitOptions()
    tol = 1e-6 if options.tol is None else options.tol
    max_iter = 2000 if options.max_iter is None else options.max_iter

    design = dataset if isinstance(dataset, PanelDesign) else build_design(dataset, spec)
    params = (init_guess.copy() if init_guess is not None
              else random_start(spec, np.random.default_rng(options.seed)))
    validate_params(params, spec, atol=1e-9)
    engine = _EmEngine(design, spec, options)

    trace: list[float] = []
    converged = False
    cycles = 0
    ll = None
    post = None
    while cycles < max_iter:
        reused = post is not None
        p1, ll0 = engine.step(params, post)
        post = None
        cycles += 1
        trace.append(ll0)
        if options.verbose:
            print(f"em cycle {cycles}: ll = {ll0:.6f}")
        # when posteriors were carried over, ll0 restates the accepted LL and
        # cannot signal convergence
        if not reused and ll is not None and abs(ll0 - ll) < tol:
            converged = True
            break
        ll = ll0

        if not options.accelerate:
            params = p1
            continue
        if cycles >= max_iter:
            params = p1
            break
        p2, ll1 = engine.step(p1)
        cycles += 1
        trace.append(ll1)
        if abs(ll1 - ll0) < tol:
            converged = True
            params, ll = p1, ll1
            break
        x0 = pack(params, spec)
        x1 = pack(p1, spec)
        x2 = pack(p2, spec)
        r = x1 - x0
        v = (x2 - x1) - r
        vv = float(v @ v)
        ll2, post2 = engine.loglik(p2)
        accepted, ll_acc, post_acc = p2, ll2, post2
        if vv > 0:
            # extrapolate along the EM path; back the step off toward the
            # plain iterate (a = -1 reproduces x2) until it helps
            a = min(-math.sqrt(float(r @ r) / vv), -1.0)
            for _ in range(4):
                try:
                    px = unpack(x0 - 2.0 * a * r + a * a * v, spec)
                    llx, postx = engine.loglik(px)
                except Exception:
                    llx, postx = -np.inf, None
                if llx >= ll2:
                    accepted, ll_acc, post_acc = px, llx, postx
                    break
                if a >= -1.0:
                    break
                a = (a - 1.0) / 2.0
        params, ll, post = accepted, ll_acc, post_acc
        trace.append(ll_acc)

    report = _make_report("em", trace[-1], spec, design, cycles, converged, trace)
    return params, report


# ---------------------------------------------------------------------------
# Analytic gradient of the full likelihood (Fisher identity)


def _dataset_ll_and_grad(design: PanelDesign, spec: ModelSpec, params: ParameterSet,
                         class_designs: list[ClassDesign], n_threads: int = 1):
    """Log-likelihood and its gradient over free cells (raw alpha scale).

    The score of the marginal likelihood equals the posterior expectation of
    the complete-data score, so one forward-backward pass per evaluation
    suffices.  Returns (ll, grad, dead_any).
    """
    lm, filtered, smoothed, pairwise, dead, logE, cs = dataset_posteriors(
        design, spec, params, n_threads
    )
    if np.any(dead >= 0) or not np.all(np.isfinite(lm)):
        return -np.inf, None, True
    ll = float(lm.sum())
    S = spec.n_classes

    pi = np.exp(log_init_probs(design, params.init))
    G_tau = (smoothed[:, 0, :] - pi).T @ design.Z_init  # (S, 1+p)

    if design.n_waves_max > 1:
        from .hmm import log_transition_tensor

        logA = log_transition_tensor(design, cs, params.trans)
        A = np.exp(logA)
        D = pairwise - smoothed[:, :-1, :, None] * A      # (N, T-1, S, S)
        Zt = design.Z_trans[:, 1:]
        G_gamma = np.einsum("ntrs,ntj->rsj", D, Zt)
        cs_next = cs[:, 1:, :]
        cs_safe = np.where(np.isneginf(cs_next), 0.0, cs_next)
        G_alpha = np.einsum("ntrs,nts->rs", D, cs_safe)
        # surplus-feedback weight on each (person, wave>=2, destination)
        W = np.einsum("ntrs,rs->nts", D, params.trans.alpha)  # aligned with cs[:,1:]
    else:
        G_gamma = np.zeros_like(params.trans.gamma)
        G_alpha = np.zeros_like(params.trans.alpha)
        W = None

    class_grads = []
    for s, cd in enumerate(class_designs):
        if cd.d == 0:
            class_grads.append(np.zeros(0))
            continue
        V, lse, P = _mnl_eval(cd, _class_theta(params, cd))
        w = smoothed[cd.sit_person, cd.sit_wave, s]
        ok = cd.chosen_pos >= 0
        w = w * ok
        safe_idx = np.maximum(cd.chosen_pos, 0)
        g = cd.F[safe_idx].T @ w - cd.F.T @ (P * w[cd.seg])
        if W is not None:
            u = np.where(
                cd.sit_wave > 0,
                W[cd.sit_person, np.maximum(cd.sit_wave - 1, 0), s] / cd.K_wave,
                0.0,
            )
            g = g + cd.F.T @ (P * u[cd.seg])
        class_grads.append(g)

    grad = np.empty(n_free_params(spec))
    pos = 0
    class_pos = [0] * S
    for i, c in enumerate(free_cells(spec)):
        if c.block in ("asc", "coef"):
            s = c.idx[0]
            grad[i] = class_grads[s][class_pos[s]]
            class_pos[s] += 1
        elif c.block == "tau":
            grad[i] = G_tau[c.idx[0], c.idx[1]]
        elif c.block == "gamma":
            grad[i] = G_gamma[c.idx[0], c.idx[1], c.idx[2]]
        else:
            grad[i] = G_alpha[c.idx[0], c.idx[1]]
    return ll, grad, False


def dataset_ll_and_grad(dataset, spec: ModelSpec, params: ParameterSet,
                        n_threads: int = 1):
    """Public wrapper: (log-likelihood, gradient over free cells, cell names).

    Gradient entries follow :func:`hmmchoice.model.free_cells`; surplus
    loadings are differentiated on their natural (untransformed) scale.
    """
    design = dataset if isinstance(dataset, PanelDesign) else build_design(dataset, spec)
    cds = [build_class_design(design, spec, s) for s in range(spec.n_classes)]
    ll, grad, bad = _dataset_ll_and_grad(design, spec, params, cds, n_threads)
    if bad:
        raise EstimationError("log-likelihood is not finite at these parameters")
    return ll, grad, [c.name for c in free_cells(spec)]


def gradient_fit(dataset: PanelDataset, spec: ModelSpec,
                 init_guess: ParameterSet | None = None,
                 options: FitOptions | None = None) -> tuple[ParameterSet, FitReport]:
    """Quasi-Newton fit of the full model (surplus feedback allowed).

    Free surplus loadings are optimized through their softplus preimage so
    nonnegativity holds by construction.  Convergence is declared when the
    gradient infinity norm drops below ``options.tol``.
    """
    options = options or FitOptions()
    tol = 1e-5 if options.tol is None else options.tol
    max_iter = 1000 if options.max_iter is None else options.max_iter

    design = dataset if isinstance(dataset, PanelDesign) else build_design(dataset, spec)
    params0 = (init_guess.copy() if init_guess is not None
               else random_start(spec, np.random.default_rng(options.seed)))
    validate_params(params0, spec, atol=1e-9)
    class_designs = [build_class_design(design, spec, s) for s in range(spec.n_classes)]
    cells = free_cells(spec)
    alpha_mask = np.array([c.block == "alpha" for c in cells])

    def objective(x):
        p = unpack(x, spec, transform_alpha=True)
        ll, grad, bad = _dataset_ll_and_grad(design, spec, p, class_designs,
                                             options.n_threads)
        if bad:
            return np.inf, np.zeros_like(x)
        if alpha_mask.any():
            grad = grad.copy()
            grad[alpha_mask] *= expit(x[alpha_mask])  # d softplus / dx
        return -ll, -grad

    x0 = pack(params0, spec, transform_alpha=True)
    f0, g0 = objective(x0)
    if not np.isfinite(f0):
        raise EstimationError("log-likelihood is not finite at the starting point")

    if options.verify_gradient:
        err = _fd_gradient_error(objective, x0)
        if err > 1e-4:
            warnings.warn(
                f"analytic gradient disagrees with finite differences "
                f"(max relative error {err:.2e})",
                RuntimeWarning,
            )

    trace: list[float] = []
    last_f = {"f": f0}

    def wrapped(x):
        f, g = objective(x)
        last_f["f"] = f
        return f, g

    result = minimize(
        wrapped,
        x0,
        jac=True,
        method="L-BFGS-B",
        callback=lambda xk: trace.append(-last_f["f"]),
        options={"maxiter": max_iter, "gtol": tol, "ftol": 1e-14},
    )
    params = unpack(result.x, spec, transform_alpha=True)
    g_inf = float(np.abs(result.jac).max()) if np.all(np.isfinite(result.jac)) else np.inf
    converged = bool(g_inf < tol)
    report = _make_report(
        "gradient", -float(result.fun), spec, design,
        int(result.nit), converged, trace or [-float(result.fun)],
        grad_inf_norm=g_inf, message=str(result.message),
    )
    return params, report


def _fd_gradient_error(objective, x, h: float = 1e-5) -> float:
    """Max relative disagreement between analytic and central FD gradient."""
    _, g = objective(x)
    fd = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h * max(1.0, abs(x[i]))
        fp, _ = objective(x + e)
        fm, _ = objective(x - e)
        fd[i] = (fp - fm) / (2 * e[i])
    if len(x) == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(fd), np.abs(g)), 1e-8)
    return float((np.abs(fd - g) / denom).max())


# ---------------------------------------------------------------------------
# Random starts, relabeling, multi-start


def random_start(spec: ModelSpec, rng: np.random.Generator,
                 scale: float = 0.5) -> ParameterSet:
    """Seeded random initial values; free surplus loadings start near zero."""
    params = zero_params(spec)
    x = rng.normal(0.0, scale, size=n_free_params(spec))
    for i, c in enumerate(free_cells(spec)):
        if c.block == "alpha":
            x[i] = 0.01
    out = unpack(x, spec, transform_alpha=False)
    return out


def _permute_spec(spec: ModelSpec, perm: tuple[int, ...]) -> ModelSpec:
    inv = {old: new for new, old in enumerate(perm)}
    return ModelSpec(
        classes=tuple(spec.classes[p] for p in perm),
        attributes=spec.attributes,
        covariates=spec.covariates,
        init_covariates=spec.init_covariates,
        trans_covariates=spec.trans_covariates,
        use_cs=spec.use_cs,
        tau_fixed={(inv[s], t): v for (s, t), v in spec.tau_fixed.items()},
        gamma_fixed={(inv[r], inv[s], t): v
                     for (r, s, t), v in spec.gamma_fixed.items()},
        alpha_fixed={(inv[r], inv[s]): v for (r, s), v in spec.alpha_fixed.items()},
    )


def _permute_params(params: ParameterSet, perm: tuple[int, ...]) -> ParameterSet:
    """Relabel classes and re-normalize the logit references."""
    tastes = tuple(params.class_tastes[p].copy() for p in perm)
    tau = params.init.tau[list(perm)] - params.init.tau[perm[0]]
    gamma = params.trans.gamma[np.ix_(list(perm), list(perm))]
    gamma = gamma - gamma[:, :1, :]
    alpha = params.trans.alpha[np.ix_(list(perm), list(perm))]
    out = params.copy()
    out.class_tastes = tastes
    out.init.tau = tau
    out.trans.gamma = gamma
    out.trans.alpha = alpha
    return out


def canonical_relabel(params: ParameterSet, spec: ModelSpec,
                      design: PanelDesign) -> tuple[ParameterSet, tuple[int, ...]]:
    """Reorder classes by descending first-wave share.

    Only permutations under which the spec (consideration sets, constraint
    table) is unchanged are considered, so structurally distinct classes
    keep their labels and label-switched optima of symmetric specs map to
    one canonical form.
    """
    shares = np.exp(log_init_probs(design, params.init)).mean(axis=0)
    best = None
    best_key = None
    for perm in itertools.permutations(range(spec.n_classes)):
        if _permute_spec(spec, perm) != spec:
            continue
        cand = _permute_params(params, perm)
        try:
            validate_params(cand, spec, atol=1e-7)
        except SpecError:
            continue
        key = tuple(-shares[p] for p in perm)
        if best_key is None or key < best_key:
            best, best_key = perm, key
    if best is None or best == tuple(range(spec.n_classes)):
        return params, tuple(range(spec.n_classes))
    # round-trip through the free vector to restore fixed cells exactly
    out = unpack(pack(_permute_params(params, best), spec), spec)
    return out, best


def multi_start(dataset: PanelDataset, spec: ModelSpec, n_starts: int, seed: int,
                fitter="em", options: FitOptions | None = None):
    """Run a fitter from seeded random starts; keep the best solution.

    Returns (params, report, summary) where summary lists one record per
    start (relabeled parameters, log-likelihood, convergence).  Classes of
    the returned solution are in canonical order.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    fit = {"em": em_fit, "gradient": gradient_fit}.get(fitter, fitter)
    options = options or FitOptions()
    design = build_design(dataset, spec)
    runs = []
    failures = []
    for k in range(n_starts):
        rng = np.random.default_rng((seed, k))
        guess = random_start(spec, rng)
        try:
            params, report = fit(design, spec, guess, options)
        except (EstimationError, np.linalg.LinAlgError) as exc:
            failures.append(f"start {k}: {exc}")
            continue
        params, perm = canonical_relabel(params, spec, design)
        runs.append(
            {
                "start": k,
                "params": params,
                "report": report,
                "log_likelihood": report.log_likelihood,
                "converged": report.converged,
                "iterations": report.iterations,
                "relabeling": perm,
            }
        )
    if not runs:
        raise EstimationError(
            "all starts failed:\n" + "\n".join(failures)
        )
    best = max(runs, key=lambda r: r["log_likelihood"])
    return best["params"], best["report"], runs


# ---------------------------------------------------------------------------
# Observed-information standard errors


def standard_errors(dataset, spec: ModelSpec, params: ParameterSet,
                    h: float = 1e-5) -> dict[str, float]:
    """Observed-information standard errors at a fitted solution.

    The Hessian is approximated by central finite differences of the
    analytic gradient (natural alpha scale); cells whose information is not
    positive come back as NaN.
    """
    design = dataset if isinstance(dataset, PanelDesign) else build_design(dataset, spec)
    cds = [build_class_design(design, spec, s) for s in range(spec.n_classes)]
    cells = free_cells(spec)
    x0 = pack(params, spec, transform_alpha=False)

    def grad_at(x):
        p = unpack(x, spec, transform_alpha=False)
        p.trans.alpha = np.maximum(p.trans.alpha, 0.0)
        _, g, bad = _dataset_ll_and_grad(design, spec, p, cds)
        if bad:
            raise EstimationError("likelihood not finite near the solution")
        return g

    d = len(x0)
    H = np.empty((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h * max(1.0, abs(x0[i]))
        H[:, i] = (grad_at(x0 + e) - grad_at(x0 - e)) / (2 * e[i])
    H = 0.5 * (H + H.T)
    se = np.full(d, np.nan)
    try:
        cov = np.linalg.inv(-H)
        diag = np.diag(cov)
        se = np.where(diag > 0, np.sqrt(np.abs(diag)), np.nan)
    except np.linalg.LinAlgError:
        warnings.warn("observed information is singular; no standard errors",
                      RuntimeWarning)
    return {c.name: float(v) for c, v in zip(cells, se)}
