"""Longitudinal choice data: domain types, CSV I/O, validation, censoring.

The on-disk layout is long format: one row per alternative per choice
situation in ``choices.csv`` (columns person_id, wave, situation, alt_id,
available, chosen, then one column per attribute) and one row per
(person, wave) in ``covariates.csv``.  A JSON sidecar names the attribute
and covariate columns and the universe of alternatives.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd


class PanelValidationError(ValueError):
    """Raised when input data violates the panel contract.

    Carries the full list of row-located problems in ``errors``.
    """

    def __init__(self, errors: list[str]):
        self.errors = errors
        shown = errors[:20]
        more = len(errors) - len(shown)
        msg = "\n".join(shown) + (f"\n... and {more} more" if more > 0 else "")
        super().__init__(msg)


@dataclass(frozen=True)
class Alternative:
    alt_id: str
    attributes: tuple[float, ...]


@dataclass(frozen=True)
class ChoiceSituation:
    situation_id: int
    alternatives: tuple[Alternative, ...]
    availability: frozenset[str]
    chosen: str


@dataclass(frozen=True)
class WaveObservation:
    wave_index: int
    situations: tuple[ChoiceSituation, ...]
    covariates: tuple[float, ...]


@dataclass(frozen=True)
class IndividualRecord:
    person_id: str
    waves: tuple[WaveObservation, ...]


@dataclass(frozen=True)
class PanelDataset:
    individuals: tuple[IndividualRecord, ...]
    attribute_schema: tuple[str, ...]
    covariate_schema: tuple[str, ...]
    mode_universe: tuple[str, ...]

    @property
    def n_individuals(self) -> int:
        return len(self.individuals)

    def n_situations(self) -> int:
        return sum(len(w.situations) for r in self.individuals for w in r.waves)

    def max_waves(self) -> int:
        return max(len(r.waves) for r in self.individuals)


def validate_dataset(ds: PanelDataset):
    """Check every invariant; raise PanelValidationError listing violations.

    Waves must be consecutive integers starting at 1 (each person's first
    observation defines their initialization period; gaps and late entry are
    rejected rather than silently reinterpreted).
    """
    errors = []
    n_attr = len(ds.attribute_schema)
    n_cov = len(ds.covariate_schema)
    universe = set(ds.mode_universe)
    seen_persons = set()
    for rec in ds.individuals:
        where = f"person {rec.person_id!r}"
        if rec.person_id in seen_persons:
            errors.append(f"{where}: duplicate person_id")
        seen_persons.add(rec.person_id)
        if not rec.waves:
            errors.append(f"{where}: no waves")
            continue
        indices = [w.wave_index for w in rec.waves]
        if indices != list(range(1, len(indices) + 1)):
            errors.append(
                f"{where}: wave indices {indices} are not consecutive from 1"
            )
        for wave in rec.waves:
            wwhere = f"{where}, wave {wave.wave_index}"
            if len(wave.covariates) != n_cov:
                errors.append(f"{wwhere}: covariate vector has length "
                              f"{len(wave.covariates)}, schema has {n_cov}")
            if not wave.situations:
                errors.append(f"{wwhere}: no choice situations")
            for sit in wave.situations:
                swhere = f"{wwhere}, situation {sit.situation_id}"
                ids = [a.alt_id for a in sit.alternatives]
                if len(set(ids)) != len(ids):
                    errors.append(f"{swhere}: duplicate alternatives")
                if not set(sit.availability) <= set(ids):
                    errors.append(f"{swhere}: availability lists unknown alternatives")
                if not sit.availability:
                    errors.append(f"{swhere}: no available alternative")
                if sit.chosen not in sit.availability:
                    errors.append(f"{swhere}: chosen alternative "
                                  f"{sit.chosen!r} is not available")
                for alt in sit.alternatives:
                    if alt.alt_id not in universe:
                        errors.append(f"{swhere}: alternative {alt.alt_id!r} "
                                      "not in the mode universe")
                    if len(alt.attributes) != n_attr:
                        errors.append(f"{swhere}, alt {alt.alt_id!r}: attribute "
                                      f"vector has length {len(alt.attributes)}, "
                                      f"schema has {n_attr}")
    if errors:
        raise PanelValidationError(errors)


def load_schema(schema) -> dict:
    """Accept a schema dict or a path to the JSON sidecar."""
    if isinstance(schema, (str, Path)):
        with open(schema, encoding="utf-8") as fh:
            schema = json.load(fh)
    for key in ("attributes", "covariates", "modes"):
        if key not in schema:
            raise PanelValidationError([f"schema is missing the {key!r} list"])
    return schema


def load_panel(choices_file, covariates_file, schema) -> PanelDataset:
    """Read and validate the long-format CSV pair into a PanelDataset."""
    schema = load_schema(schema)
    attrs = list(schema["attributes"])
    covs = list(schema["covariates"])
    modes = list(schema["modes"])

    choices = pd.read_csv(choices_file, dtype={"person_id": str})
    covariates = pd.read_csv(covariates_file, dtype={"person_id": str})
    errors = []
    needed = ["person_id", "wave", "situation", "alt_id", "available", "chosen"] + attrs
    missing = [c for c in needed if c not in choices.columns]
    if missing:
        raise PanelValidationError([f"choices file lacks columns {missing}"])
    missing = [c for c in ["person_id", "wave"] + covs if c not in covariates.columns]
    if missing:
        raise PanelValidationError([f"covariates file lacks columns {missing}"])

    for col in attrs:
        bad = pd.to_numeric(choices[col], errors="coerce").isna() & choices[col].notna()
        for i in choices.index[bad]:
            errors.append(f"choices row {i + 2}: non-numeric {col!r} value "
                          f"{choices.at[i, col]!r}")
        choices[col] = pd.to_numeric(choices[col], errors="coerce")
    for col in covs:
        bad = pd.to_numeric(covariates[col], errors="coerce").isna() & covariates[col].notna()
        for i in covariates.index[bad]:
            errors.append(f"covariates row {i + 2}: non-numeric {col!r} value "
                          f"{covariates.at[i, col]!r}")
        covariates[col] = pd.to_numeric(covariates[col], errors="coerce")
    if errors:
        raise PanelValidationError(errors)

    cov_lookup = {}
    for i, row in covariates.iterrows():
        key = (row["person_id"], int(row["wave"]))
        if key in cov_lookup:
            errors.append(f"covariates row {i + 2}: duplicate (person, wave) {key}")
        cov_lookup[key] = tuple(float(row[c]) for c in covs)

    individuals = []
    for person_id, pgroup in choices.groupby("person_id", sort=True):
        waves = []
        for wave_idx, wgroup in pgroup.groupby("wave", sort=True):
            sits = []
            for sit_idx, sgroup in wgroup.groupby("situation", sort=True):
                alt_ids = [str(a) for a in sgroup["alt_id"]]
                attr_vals = sgroup[attrs].to_numpy(dtype=float) if attrs else np.zeros((len(sgroup), 0))
                avail_flags = sgroup["available"].to_numpy().astype(bool)
                chosen_flags = sgroup["chosen"].to_numpy().astype(bool)
                alts = tuple(
                    Alternative(aid, tuple(attr_vals[i]))
                    for i, aid in enumerate(alt_ids)
                )
                avail = frozenset(a for a, f in zip(alt_ids, avail_flags) if f)
                first_line = sgroup.index[0] + 2
                if chosen_flags.sum() != 1:
                    errors.append(
                        f"choices rows near {first_line} (person {person_id!r}, wave "
                        f"{wave_idx}, situation {sit_idx}): expected exactly one "
                        f"chosen row, found {int(chosen_flags.sum())}"
                    )
                    continue
                pos = int(np.flatnonzero(chosen_flags)[0])
                chosen = alt_ids[pos]
                if not avail_flags[pos]:
                    errors.append(
                        f"choices row {sgroup.index[pos] + 2}: chosen alternative "
                        f"{chosen!r} is marked unavailable"
                    )
                sits.append(ChoiceSituation(int(sit_idx), alts, avail, chosen))
            key = (person_id, int(wave_idx))
            if key not in cov_lookup:
                errors.append(f"no covariate row for person {person_id!r}, wave {wave_idx}")
                covariate_vec = tuple(0.0 for _ in covs)
            else:
                covariate_vec = cov_lookup[key]
            waves.append(WaveObservation(int(wave_idx), tuple(sits), covariate_vec))
        individuals.append(IndividualRecord(str(person_id), tuple(waves)))
    if errors:
        raise PanelValidationError(errors)

    ds = PanelDataset(tuple(individuals), tuple(attrs), tuple(covs), tuple(modes))
    validate_dataset(ds)
    return ds


def write_panel(ds: PanelDataset, choices_file, covariates_file, schema_file=None):
    """Write the CSV pair (and optionally the schema sidecar).

    Floats are written with shortest round-tripping repr so that
    load_panel(write_panel(ds)) reproduces ds exactly.
    """
    crows = []
    vrows = []
    for rec in ds.individuals:
        for wave in rec.waves:
            vrows.append(
                {"person_id": rec.person_id, "wave": wave.wave_index,
                 **{c: v for c, v in zip(ds.covariate_schema, wave.covariates)}}
            )
            for sit in wave.situations:
                for alt in sit.alternatives:
                    crows.append(
                        {
                            "person_id": rec.person_id,
                            "wave": wave.wave_index,
                            "situation": sit.situation_id,
                            "alt_id": alt.alt_id,
                            "available": int(alt.alt_id in sit.availability),
                            "chosen": int(alt.alt_id == sit.chosen),
                            **{a: v for a, v in zip(ds.attribute_schema, alt.attributes)},
                        }
                    )
    pd.DataFrame(crows).to_csv(choices_file, index=False)
    pd.DataFrame(vrows).to_csv(covariates_file, index=False)
    if schema_file is not None:
        with open(schema_file, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "attributes": list(ds.attribute_schema),
                    "covariates": list(ds.covariate_schema),
                    "modes": list(ds.mode_universe),
                },
                fh,
                indent=2,
            )
            fh.write("\n")


def censor_left(ds: PanelDataset, first_kept_wave: int) -> PanelDataset:
    """Drop all waves before ``first_kept_wave`` and re-base indices to 1."""
    if first_kept_wave < 1:
        raise ValueError("first_kept_wave must be >= 1")
    if first_kept_wave == 1:
        return ds
    lost = [r.person_id for r in ds.individuals if len(r.waves) < first_kept_wave]
    if lost:
        raise PanelValidationError(
            [f"person {p!r} has no waves at or after {first_kept_wave}" for p in lost]
        )
    individuals = []
    for rec in ds.individuals:
        waves = tuple(
            WaveObservation(w.wave_index - first_kept_wave + 1, w.situations, w.covariates)
            for w in rec.waves
            if w.wave_index >= first_kept_wave
        )
        individuals.append(IndividualRecord(rec.person_id, waves))
    return PanelDataset(
        tuple(individuals), ds.attribute_schema, ds.covariate_schema, ds.mode_universe
    )


def select_wave(ds: PanelDataset, wave_index: int) -> PanelDataset:
    """Restrict the panel to a single wave (re-based to index 1).

    Used to build the cross-sections that static latent class models are
    fitted on.
    """
    individuals = []
    missing = []
    for rec in ds.individuals:
        match = [w for w in rec.waves if w.wave_index == wave_index]
        if not match:
            missing.append(rec.person_id)
            continue
        wave = match[0]
        individuals.append(
            IndividualRecord(
                rec.person_id,
                (WaveObservation(1, wave.situations, wave.covariates),),
            )
        )
    if missing:
        raise PanelValidationError(
            [f"person {p!r} has no wave {wave_index}" for p in missing]
        )
    return PanelDataset(
        tuple(individuals), ds.attribute_schema, ds.covariate_schema, ds.mode_universe
    )
