"""Class-conditional multinomial logit: utilities, choice probabilities,
wave-level emission log-likelihood, and the expected-maximum-utility
(logsum) measure of consumer surplus.

A class evaluates the *effective* choice set of a situation: the
intersection of what is situationally available and what the class
considers.  A chosen alternative outside the effective set makes the wave
impossible under that class: the emission log-probability is the -inf
sentinel, which downstream mixing handles through log-sum-exp.  Wave
log-probabilities below ``LOG_FLOOR`` are also collapsed to the sentinel so
later exponentials cannot underflow.
"""

from __future__ import annotations

import numpy as np

from .design import PanelDesign, effective_row_mask, segment_logsumexp
from .model import ClassSpec, ClassTasteParams
from .panel import ChoiceSituation, WaveObservation

LOG_FLOOR = -700.0
NEG_INF = -np.inf


def effective_choice_set(situation: ChoiceSituation, spec: ClassSpec) -> list[str]:
    """Available alternatives the class considers, in situation order."""
    consider = set(spec.consideration_set)
    return [
        a.alt_id
        for a in situation.alternatives
        if a.alt_id in situation.availability and a.alt_id in consider
    ]


def class_utilities(situation: ChoiceSituation, spec: ClassSpec,
                    params: ClassTasteParams) -> np.ndarray:
    """Systematic utilities over the effective choice set.

    Returns one value per alternative in :func:`effective_choice_set` order:
    the class constant plus the attribute inner product.
    """
    effective = set(effective_choice_set(situation, spec))
    out = []
    for alt in situation.alternatives:
        if alt.alt_id not in effective:
            continue
        v = params.asc[alt.alt_id] + float(np.dot(alt.attributes, params.coeffs))
        out.append(v)
    return np.asarray(out)


def _softmax(v: np.ndarray) -> np.ndarray:
    m = v.max()
    e = np.exp(v - m)
    return e / e.sum()


def class_choice_probs(situation: ChoiceSituation, spec: ClassSpec,
                       params: ClassTasteParams) -> np.ndarray:
    """Choice probabilities over the effective set (max-subtracted softmax)."""
    v = class_utilities(situation, spec, params)
    if v.size == 0:
        raise ValueError("empty effective choice set")
    return _softmax(v)


def class_emission_logprob(wave: WaveObservation, spec: ClassSpec,
                           params: ClassTasteParams) -> float:
    """Log-probability of the wave's observed choices under one class.

    The product over the wave's situations in log space.  Returns -inf when
    any chosen alternative falls outside the class's effective set, or when
    the total drops below the underflow floor.
    """
    total = 0.0
    for sit in wave.situations:
        effective = effective_choice_set(sit, spec)
        if sit.chosen not in effective:
            return NEG_INF
        v = class_utilities(sit, spec, params)
        m = v.max()
        total += v[effective.index(sit.chosen)] - m - np.log(np.exp(v - m).sum())
    if total < LOG_FLOOR:
        return NEG_INF
    return float(total)


def consumer_surplus(wave: WaveObservation, spec: ClassSpec,
                     params: ClassTasteParams) -> float:
    """Expected maximum utility the class offers over the wave.

    The average over the wave's situations of the logsum of exponentiated
    systematic utilities.  Undefined (raises) when a situation's effective
    set is empty.
    """
    total = 0.0
    for sit in wave.situations:
        v = class_utilities(sit, spec, params)
        if v.size == 0:
            raise ValueError(
                f"situation {sit.situation_id}: no available alternative in the "
                f"class's consideration set; surplus is undefined"
            )
        m = v.max()
        total += m + np.log(np.exp(v - m).sum())
    return float(total / len(wave.situations))


# ---------------------------------------------------------------------------
# Vectorized versions over a PanelDesign (the estimation hot path)


def class_row_utilities(design: PanelDesign, spec: ClassSpec,
                        params: ClassTasteParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-row systematic utilities and the effective-row mask."""
    asc_vec = np.zeros(len(design.alt_names))
    for alt, v in params.asc.items():
        asc_vec[design.alt_names.index(alt)] = v
    V = asc_vec[design.row_alt] + design.X @ params.coeffs
    return V, effective_row_mask(design, spec.consideration_set)


def class_wave_terms(design: PanelDesign, spec: ClassSpec,
                     params: ClassTasteParams) -> tuple[np.ndarray, np.ndarray]:
    """Emission log-probability and consumer surplus per (person, wave).

    Returns two (N, Tmax) arrays; padded cells (beyond a person's last wave)
    are zero.  Cells may be -inf: emissions when the class cannot produce
    the observed choices, surplus when a situation's effective set is empty.
    """
    V, eff = class_row_utilities(design, spec, params)
    V_eff = np.where(eff, V, NEG_INF)
    lse = segment_logsumexp(V_eff, design.sit_starts, design.row_sit)

    chosen_ok = eff[design.chosen_row] & np.isfinite(lse)
    with np.errstate(invalid="ignore"):
        logp_sit = np.where(chosen_ok, V[design.chosen_row] - lse, NEG_INF)

    size = design.n_persons * design.n_waves_max
    key = design.wave_key
    logE = np.bincount(key, weights=logp_sit, minlength=size).reshape(
        design.n_persons, design.n_waves_max
    )
    logE[logE < LOG_FLOOR] = NEG_INF

    cs_sum = np.bincount(key, weights=lse, minlength=size).reshape(
        design.n_persons, design.n_waves_max
    )
    counts = design.n_sit_per_wave
    with np.errstate(invalid="ignore"):
        cs = np.where(counts > 0, cs_sum / np.maximum(counts, 1), 0.0)
    return logE, cs


def all_class_wave_terms(design: PanelDesign, model_spec, params) -> tuple[np.ndarray, np.ndarray]:
    """Stack emission and surplus terms over classes: (N, Tmax, S) arrays."""
    logE = np.empty((design.n_persons, design.n_waves_max, model_spec.n_classes))
    cs = np.empty_like(logE)
    for s, (cls, taste) in enumerate(zip(model_spec.classes, params.class_tastes)):
        logE[:, :, s], cs[:, :, s] = class_wave_terms(design, cls, taste)
    return logE, cs
