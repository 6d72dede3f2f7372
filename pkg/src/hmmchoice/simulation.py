"""Synthetic panel generation and the two-state recovery experiment.

Panels are drawn from a known model: each person's first-wave class comes
from the initialization logit, later classes follow the transition logit,
and every situation's choice follows the class-conditional logit.  The
hidden class path is returned (and written) separately so the observable
files stay a faithful analyst's-eye panel.  Per-person RNG substreams are
derived from (seed, person index), so output is identical no matter how
generation is chunked.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from math import log

import numpy as np

from .choice import class_choice_probs, consumer_surplus, effective_choice_set
from .hmm import initialization_probs, propagate_marginals, transition_matrix
from .model import ClassSpec, ClassTasteParams, ModelSpec, ParameterSet, zero_params
from .panel import (
    Alternative,
    ChoiceSituation,
    IndividualRecord,
    PanelDataset,
    WaveObservation,
    censor_left,
    validate_dataset,
)


def _draw(rng: np.random.Generator, dist: dict, size=None):
    kind = dist.get("kind", "constant")
    if kind == "constant":
        return np.full(size, float(dist["value"])) if size else float(dist["value"])
    if kind == "normal":
        return rng.normal(dist["mean"], dist["sd"], size=size)
    if kind == "lognormal":
        return rng.lognormal(dist["mean"], dist["sd"], size=size)
    if kind == "uniform":
        return rng.uniform(dist["low"], dist["high"], size=size)
    if kind == "bernoulli":
        return rng.binomial(1, dist["p"], size=size).astype(float)
    if kind == "poisson":
        return rng.poisson(dist["lam"], size=size).astype(float)
    raise ValueError(f"unknown distribution kind {kind!r}")


@dataclass
class GenerativeConfig:
    """Everything needed to simulate a panel from known parameters.

    ``covariate_generators`` / ``attribute_generators`` map names to
    distribution descriptions ({"kind": "normal", "mean": ..., "sd": ...},
    "uniform", "bernoulli", "poisson", "lognormal" or "constant").
    Covariates are drawn once per person and held fixed over waves unless
    the description sets "per_wave": true; attributes are drawn fresh for
    every (situation, alternative).
    """

    spec: ModelSpec
    true_params: ParameterSet
    n_individuals: int
    n_waves: int
    situations_per_wave: int = 1
    covariate_generators: dict = field(default_factory=dict)
    attribute_generators: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if min(self.n_individuals, self.n_waves, self.situations_per_wave) < 1:
            raise ValueError("all counts must be >= 1")
        names = tuple(self.covariate_generators)
        if names != tuple(self.spec.covariates):
            raise ValueError(
                f"covariate generators {names} must match the spec's covariate "
                f"schema {self.spec.covariates}"
            )
        if tuple(self.attribute_generators) != tuple(self.spec.attributes):
            raise ValueError("attribute generators must match the attribute schema")


def generate_panel(config: GenerativeConfig) -> tuple[PanelDataset, np.ndarray]:
    """Simulate the observable panel and the hidden class paths.

    Returns (dataset, states) where states[n, t] is the 0-based class of
    person n at wave t+1.
    """
    spec = config.spec
    params = config.true_params
    universe = spec.mode_universe()
    S = spec.n_classes
    states = np.zeros((config.n_individuals, config.n_waves), dtype=np.int64)
    individuals = []

    for n in range(config.n_individuals):
        rng = np.random.default_rng((config.seed, n))
        base_cov = {
            name: float(_draw(rng, dist))
            for name, dist in config.covariate_generators.items()
        }
        waves = []
        state = -1
        for t in range(config.n_waves):
            cov = dict(base_cov)
            for name, dist in config.covariate_generators.items():
                if dist.get("per_wave"):
                    cov[name] = float(_draw(rng, dist))
            cov_vec = tuple(cov[c] for c in spec.covariates)

            sits = []
            for k in range(config.situations_per_wave):
                alts = tuple(
                    Alternative(
                        a,
                        tuple(
                            float(_draw(rng, dist))
                            for dist in config.attribute_generators.values()
                        ),
                    )
                    for a in universe
                )
                sits.append(ChoiceSituation(k + 1, alts, frozenset(universe), ""))

            wave_stub = WaveObservation(t + 1, tuple(sits), cov_vec)
            if t == 0:
                z1 = tuple(cov[c] for c in spec.init_covariates)
                p = initialization_probs(z1, params.init)
            else:
                zt = tuple(cov[c] for c in spec.trans_covariates)
                cs = np.array([
                    consumer_surplus(wave_stub, spec.classes[s], params.class_tastes[s])
                    for s in range(S)
                ])
                p = transition_matrix(zt, cs, params.trans)[state]
            state = int(rng.choice(S, p=p))
            states[n, t] = state

            chosen_sits = []
            for sit in sits:
                eff = effective_choice_set(sit, spec.classes[state])
                probs = class_choice_probs(sit, spec.classes[state],
                                           params.class_tastes[state])
                chosen = eff[int(rng.choice(len(eff), p=probs))]
                chosen_sits.append(
                    ChoiceSituation(sit.situation_id, sit.alternatives,
                                    sit.availability, chosen)
                )
            waves.append(WaveObservation(t + 1, tuple(chosen_sits), cov_vec))
        individuals.append(IndividualRecord(f"p{n + 1:05d}", tuple(waves)))

    ds = PanelDataset(
        tuple(individuals),
        tuple(spec.attributes),
        tuple(spec.covariates),
        universe,
    )
    validate_dataset(ds)
    return ds, states


# ---------------------------------------------------------------------------
# Two-state recovery experiment


def two_state_config(n_individuals: int = 5000, n_waves: int = 10,
                     seed: int = 0) -> GenerativeConfig:
    """The two-class, two-outcome generative model of the recovery study.

    No covariates or attributes: membership starts at [0.4, 0.6], each step
    follows [[0.8, 0.2], [0.3, 0.7]], and the two classes choose outcome_1
    with probability 0.5 and 0.7 respectively.  Constants are the log-odds
    of those probabilities.
    """
    classes = (
        ClassSpec("state_1", ("outcome_1", "outcome_2"), "outcome_2"),
        ClassSpec("state_2", ("outcome_1", "outcome_2"), "outcome_2"),
    )
    spec = ModelSpec(classes=classes, attributes=(), covariates=())
    params = zero_params(spec)
    params.class_tastes[0].asc["outcome_1"] = log(0.5 / 0.5)
    params.class_tastes[1].asc["outcome_1"] = log(0.7 / 0.3)
    params.init.tau[1, 0] = log(0.6 / 0.4)
    params.trans.gamma[0, 1, 0] = log(0.2 / 0.8)
    params.trans.gamma[1, 1, 0] = log(0.7 / 0.3)
    return GenerativeConfig(
        spec=spec,
        true_params=params,
        n_individuals=n_individuals,
        n_waves=n_waves,
        situations_per_wave=1,
        seed=seed,
    )


def _probability_summary(spec: ModelSpec, params: ParameterSet) -> dict[str, float]:
    """Reduce a covariate-free two-state model to its probability cells."""
    sit = ChoiceSituation(
        1,
        (Alternative("outcome_1", ()), Alternative("outcome_2", ())),
        frozenset({"outcome_1", "outcome_2"}),
        "outcome_1",
    )
    init = initialization_probs((), params.init)
    trans = transition_matrix((), np.zeros(spec.n_classes), params.trans)
    out = {}
    for s in range(spec.n_classes):
        out[f"initialization_class_{s + 1}"] = float(init[s])
    for r in range(spec.n_classes):
        for s in range(spec.n_classes):
            out[f"transition_to_{s + 1}_from_{r + 1}"] = float(trans[r, s])
    for s in range(spec.n_classes):
        probs = class_choice_probs(sit, spec.classes[s], params.class_tastes[s])
        eff = effective_choice_set(sit, spec.classes[s])
        for a, p in zip(eff, probs):
            out[f"p_{a}_class_{s + 1}"] = float(p)
    return out


ROW_ORDER = [
    "initialization_class_1",
    "initialization_class_2",
    "transition_to_1_from_1",
    "transition_to_2_from_1",
    "transition_to_1_from_2",
    "transition_to_2_from_2",
    "p_outcome_1_class_1",
    "p_outcome_2_class_1",
    "p_outcome_1_class_2",
    "p_outcome_2_class_2",
]


def _flip_class_labels(key: str) -> str:
    sub = lambda m: m.group(1) + ("2" if m.group(2) == "1" else "1")
    return re.sub(r"(class_|from_|to_)([12])", sub, key)


def _align_summary(fit: dict[str, float], truth: dict[str, float]) -> dict[str, float]:
    """Resolve two-class label switching by matching cells against truth."""
    flipped = {_flip_class_labels(k): v for k, v in fit.items()}
    err_id = sum(abs(fit[k] - truth[k]) for k in truth)
    err_fl = sum(abs(flipped[k] - truth[k]) for k in truth)
    return fit if err_id <= err_fl else flipped


def table1_experiment(seed: int, n_individuals: int = 5000, n_waves: int = 10,
                      censor_at: int = 6, n_starts: int = 3,
                      options=None) -> dict:
    """Recovery study: fit the full panel and the left-censored panel.

    Generates the two-state panel, EM-fits both the full ten-wave panel and
    the panel with the first five waves removed, and tabulates true versus
    recovered probabilities.  The censored fit's initialization column
    targets the propagated distribution at the first kept wave rather than
    the true first-wave distribution; all other cells stay unbiased.
    """
    from .estimation import FitOptions, multi_start

    config = two_state_config(n_individuals, n_waves, seed)
    ds, _ = generate_panel(config)
    truth = _probability_summary(config.spec, config.true_params)

    options = options or FitOptions()
    rows = {}
    fits = {}
    for label, data in (
        ("full", ds),
        ("censored", censor_left(ds, censor_at)),
    ):
        params, report, _ = multi_start(
            data, config.spec, n_starts=n_starts, seed=seed, fitter="em",
            options=options,
        )
        fits[label] = (params, report)
        rows[label] = _align_summary(
            _probability_summary(config.spec, params), truth
        )

    trans = transition_matrix((), np.zeros(2), config.true_params.trans)
    pi_censored = propagate_marginals(
        initialization_probs((), config.true_params.init),
        [trans] * (censor_at - 1),
    )
    table = [
        {
            "variable": key,
            "true_value": truth[key],
            "full_panel": rows["full"][key],
            "censored_panel": rows["censored"][key],
        }
        for key in ROW_ORDER
    ]
    return {
        "table": table,
        "censored_initialization_target": [float(v) for v in pi_censored],
        "seed": seed,
        "n_individuals": n_individuals,
        "n_waves": n_waves,
        "first_kept_wave": censor_at,
        "reports": {k: fits[k][1] for k in fits},
        "params": {k: fits[k][0] for k in fits},
    }
