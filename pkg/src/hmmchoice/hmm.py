"""Initialization and transition logits, exact marginal likelihood via the
forward recursion, smoothing, and Markov-chain propagation.

The latent state sequence is first-order Markov.  State membership at the
first observed wave follows a multinomial logit on individual covariates;
transitions follow a multinomial logit on covariates plus, per destination
class, the consumer surplus that class offers (weighted by a nonnegative
loading), so improvements in what a class offers pull individuals toward
it.  The marginal likelihood of a person's choice sequence sums over all
state paths; the log-domain forward recursion computes it exactly and
tolerates -inf emission sentinels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .choice import all_class_wave_terms
from .design import PanelDesign, build_design
from .model import InitParams, ModelSpec, ParameterSet, SpecError, TransParams
from .panel import IndividualRecord, PanelDataset


class ZeroLikelihoodError(ValueError):
    """No latent class can explain some observed wave."""


@dataclass
class StatePosterior:
    """Filtered and smoothed state distributions for one individual."""

    filtered: np.ndarray    # (T, S)
    smoothed: np.ndarray    # (T, S)
    pairwise: np.ndarray    # (T-1, S, S) joint smoothed marginals
    log_marginal: float


def initialization_probs(covariates, params: InitParams) -> np.ndarray:
    """Class membership probabilities at the first observed wave."""
    z = np.concatenate([[1.0], np.asarray(covariates, dtype=float)])
    u = params.tau @ z
    e = np.exp(u - u.max())
    return e / e.sum()


def _cs_term(alpha_row: np.ndarray, cs: np.ndarray) -> np.ndarray:
    """alpha * CS with the convention 0 * (-inf) = 0.

    A class whose effective set is empty offers -inf surplus; with a
    positive loading it becomes unreachable, with a zero loading the term
    vanishes.
    """
    neg = np.isneginf(cs)
    safe = np.where(neg, 0.0, cs)
    out = alpha_row * safe
    out = np.where(neg & (alpha_row > 0), -np.inf, out)
    return out


def transition_matrix(covariates, cs, params: TransParams) -> np.ndarray:
    """Row-stochastic matrix of class transition probabilities.

    Row r gives the distribution over destination classes for an individual
    in class r at the previous wave, given current covariates and the
    per-destination consumer surplus vector ``cs``.
    """
    if params.alpha.min() < 0:
        raise ValueError("surplus loadings must be nonnegative")
    z = np.concatenate([[1.0], np.asarray(covariates, dtype=float)])
    cs = np.asarray(cs, dtype=float)
    S = params.gamma.shape[0]
    out = np.empty((S, S))
    for r in range(S):
        u = params.gamma[r] @ z + _cs_term(params.alpha[r], cs)
        m = u.max()
        if not np.isfinite(m):
            raise ValueError(f"origin class {r}: every destination is unreachable")
        e = np.exp(u - m)
        out[r] = e / e.sum()
    return out


def propagate_marginals(pi1, transition_matrices) -> np.ndarray:
    """Push a class distribution through a chain of transition matrices."""
    pi = np.asarray(pi1, dtype=float)
    for mat in transition_matrices:
        pi = pi @ np.asarray(mat)
    return pi


# ---------------------------------------------------------------------------
# Dataset-level assembly


def log_init_probs(design: PanelDesign, params: InitParams) -> np.ndarray:
    """(N, S) log initialization probabilities."""
    u = design.Z_init @ params.tau.T
    u -= u.max(axis=1, keepdims=True)
    return u - np.log(np.exp(u).sum(axis=1, keepdims=True))


def log_transition_tensor(design: PanelDesign, cs: np.ndarray,
                          params: TransParams) -> np.ndarray:
    """(N, Tmax-1, S, S) log transition probabilities.

    Slice [:, t-1] moves wave t to wave t+1 (1-based) and is built from the
    destination wave's covariates and surplus values.  Padded slices are 0.
    """
    N, Tmax = design.n_persons, design.n_waves_max
    S = params.gamma.shape[0]
    if Tmax == 1:
        return np.zeros((N, 0, S, S))
    Z = design.Z_trans[:, 1:]                       # (N, Tmax-1, 1+p)
    u = np.einsum("ntp,rsp->ntrs", Z, params.gamma)
    cs_next = cs[:, 1:, :]                          # (N, Tmax-1, S)
    neg = np.isneginf(cs_next)
    safe = np.where(neg, 0.0, cs_next)
    term = params.alpha[None, None, :, :] * safe[:, :, None, :]
    term = np.where(neg[:, :, None, :] & (params.alpha[None, None] > 0), -np.inf, term)
    u = u + term
    m = u.max(axis=3, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(u - m_safe)
    with np.errstate(divide="ignore"):
        logA = u - m_safe - np.log(e.sum(axis=3, keepdims=True))
    pad = (np.arange(1, Tmax)[None, :] >= design.lengths[:, None])
    logA[pad] = 0.0
    return logA


def dataset_posteriors(design: PanelDesign, spec: ModelSpec, params: ParameterSet,
                       n_threads: int = 1):
    """Run the kernel over the whole panel.

    Returns (log_marginal (N,), filtered, smoothed, pairwise, dead_wave,
    logE, cs); -inf marginals are passed through for the caller to handle.
    """
    logE, cs = all_class_wave_terms(design, spec, params)
    log_pi = log_init_probs(design, params.init)
    logA = log_transition_tensor(design, cs, params.trans)
    out = _kernels.forward_backward(log_pi, logA, logE, design.lengths,
                                    n_threads=n_threads)
    return out + (logE, cs)


def _raise_dead(design: PanelDesign, dead_wave: np.ndarray):
    idx = np.flatnonzero(dead_wave >= 0)
    if idx.size:
        n = idx[0]
        raise ZeroLikelihoodError(
            f"person {design.person_ids[n]!r}: every class assigns zero "
            f"probability by wave {int(dead_wave[n]) + 1}"
        )


def dataset_loglik(design: PanelDesign, spec: ModelSpec, params: ParameterSet,
                   n_threads: int = 1) -> float:
    """Total log-likelihood; raises if any individual is unexplainable."""
    out = dataset_posteriors(design, spec, params, n_threads)
    _raise_dead(design, out[4])
    return float(out[0].sum())


def _single_record_design(record: IndividualRecord, spec: ModelSpec) -> PanelDesign:
    # Single-record entry points read the record's covariate vectors through
    # the model's covariate schema, so the lengths must agree.
    seen: dict[str, None] = {}
    for a in spec.mode_universe():
        seen.setdefault(a)
    for wave in record.waves:
        if len(wave.covariates) != len(spec.covariates):
            raise SpecError(
                f"person {record.person_id!r}, wave {wave.wave_index}: covariate "
                f"vector of length {len(wave.covariates)} does not match the "
                f"model's {len(spec.covariates)}-covariate schema"
            )
        for sit in wave.situations:
            for alt in sit.alternatives:
                seen.setdefault(alt.alt_id)
    ds = PanelDataset((record,), spec.attributes, tuple(spec.covariates), tuple(seen))
    return build_design(ds, spec)


def forward_loglik(record: IndividualRecord, spec: ModelSpec,
                   params: ParameterSet) -> tuple[float, np.ndarray]:
    """Log marginal likelihood of one person's sequence plus filtered states.

    The result equals the nested sum over all S^T state paths of the path
    prior times the emission product, computed by the forward recursion.
    """
    design = _single_record_design(record, spec)
    lm, filtered, _, _, dead, _, _ = dataset_posteriors(design, spec, params)
    _raise_dead(design, dead)
    return float(lm[0]), filtered[0]


def smoothed_posteriors(record: IndividualRecord, spec: ModelSpec,
                        params: ParameterSet) -> StatePosterior:
    """Filtered, smoothed and pairwise state posteriors for one person."""
    design = _single_record_design(record, spec)
    lm, filtered, smoothed, pairwise, dead, _, _ = dataset_posteriors(design, spec, params)
    _raise_dead(design, dead)
    return StatePosterior(
        filtered=filtered[0],
        smoothed=smoothed[0],
        pairwise=pairwise[0],
        log_marginal=float(lm[0]),
    )
