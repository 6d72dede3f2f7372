"""Dense array views of a panel for vectorized likelihood work.

Everything downstream (emission log-probabilities, surplus terms, the
forward-backward kernel, the weighted-logit solvers) operates on the arrays
built here rather than on the nested dataclasses.  Rows cover available
alternatives only, sorted by (person, wave, situation) so each situation is
a contiguous row segment addressable through ``sit_starts``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelSpec, SpecError
from .panel import PanelDataset


@dataclass(frozen=True)
class PanelDesign:
    person_ids: tuple[str, ...]
    alt_names: tuple[str, ...]      # row alt codes index into this
    n_persons: int
    n_waves_max: int
    lengths: np.ndarray             # (N,) waves per person
    # choice rows (available alternatives only)
    X: np.ndarray                   # (n_rows, n_attr)
    row_alt: np.ndarray             # (n_rows,) int32 codes into alt_names
    row_sit: np.ndarray             # (n_rows,) situation index, sorted
    sit_starts: np.ndarray          # (n_sit + 1,) row segment boundaries
    sit_person: np.ndarray          # (n_sit,)
    sit_wave: np.ndarray            # (n_sit,) 0-based
    chosen_row: np.ndarray          # (n_sit,) row index of the chosen alternative
    sit_navail: np.ndarray          # (n_sit,) available count (null model)
    n_sit_per_wave: np.ndarray      # (N, Tmax)
    # covariate designs (leading intercept column)
    Z_init: np.ndarray              # (N, 1 + p_init)
    Z_trans: np.ndarray             # (N, Tmax, 1 + p_trans)

    @property
    def n_sit(self) -> int:
        return len(self.sit_person)

    @property
    def wave_key(self) -> np.ndarray:
        return self.sit_person * self.n_waves_max + self.sit_wave


def build_design(ds: PanelDataset, spec: ModelSpec) -> PanelDesign:
    """Flatten a validated dataset into aligned arrays for one ModelSpec."""
    if tuple(ds.attribute_schema) != tuple(spec.attributes):
        raise SpecError(
            f"dataset attribute schema {ds.attribute_schema} does not match "
            f"the model's {spec.attributes}"
        )
    for c in spec.covariates:
        if c not in ds.covariate_schema:
            raise SpecError(f"model covariate {c!r} missing from dataset schema")
    for cls in spec.classes:
        for alt in cls.consideration_set:
            if alt not in ds.mode_universe:
                raise SpecError(
                    f"class {cls.name!r} considers {alt!r}, which is not in the "
                    "dataset's mode universe"
                )

    alt_names = tuple(ds.mode_universe)
    alt_code = {a: i for i, a in enumerate(alt_names)}
    cov_pos = {c: i for i, c in enumerate(ds.covariate_schema)}
    init_cols = [cov_pos[c] for c in spec.init_covariates]
    trans_cols = [cov_pos[c] for c in spec.trans_covariates]

    N = ds.n_individuals
    lengths = np.array([len(r.waves) for r in ds.individuals], dtype=np.int64)
    Tmax = int(lengths.max())

    X_rows, row_alt, row_sit = [], [], []
    sit_person, sit_wave, chosen_row, sit_navail, sit_starts = [], [], [], [], [0]
    n_sit_per_wave = np.zeros((N, Tmax), dtype=np.int64)
    Z_init = np.zeros((N, 1 + len(init_cols)))
    Z_trans = np.zeros((N, Tmax, 1 + len(trans_cols)))
    Z_init[:, 0] = 1.0
    Z_trans[:, :, 0] = 1.0

    sit_id = 0
    row_id = 0
    for n, rec in enumerate(ds.individuals):
        for t, wave in enumerate(rec.waves):
            cov = np.asarray(wave.covariates)
            if t == 0:
                Z_init[n, 1:] = cov[init_cols]
            Z_trans[n, t, 1:] = cov[trans_cols]
            n_sit_per_wave[n, t] = len(wave.situations)
            for sit in wave.situations:
                chosen_here = -1
                navail = 0
                for alt in sit.alternatives:
                    if alt.alt_id not in sit.availability:
                        continue
                    X_rows.append(alt.attributes)
                    row_alt.append(alt_code[alt.alt_id])
                    row_sit.append(sit_id)
                    if alt.alt_id == sit.chosen:
                        chosen_here = row_id
                    navail += 1
                    row_id += 1
                sit_person.append(n)
                sit_wave.append(t)
                chosen_row.append(chosen_here)
                sit_navail.append(navail)
                sit_starts.append(row_id)
                sit_id += 1

    n_attr = len(spec.attributes)
    X = np.asarray(X_rows, dtype=float).reshape(row_id, n_attr)
    return PanelDesign(
        person_ids=tuple(r.person_id for r in ds.individuals),
        alt_names=alt_names,
        n_persons=N,
        n_waves_max=Tmax,
        lengths=lengths,
        X=X,
        row_alt=np.asarray(row_alt, dtype=np.int32),
        row_sit=np.asarray(row_sit, dtype=np.int64),
        sit_starts=np.asarray(sit_starts, dtype=np.int64),
        sit_person=np.asarray(sit_person, dtype=np.int64),
        sit_wave=np.asarray(sit_wave, dtype=np.int64),
        chosen_row=np.asarray(chosen_row, dtype=np.int64),
        sit_navail=np.asarray(sit_navail, dtype=np.int64),
        n_sit_per_wave=n_sit_per_wave,
        Z_init=Z_init,
        Z_trans=Z_trans,
    )


def effective_row_mask(design: PanelDesign, consideration_set) -> np.ndarray:
    """Rows whose alternative a class actually evaluates."""
    in_set = np.zeros(len(design.alt_names), dtype=bool)
    for a in consideration_set:
        in_set[design.alt_names.index(a)] = True
    return in_set[design.row_alt]


def segment_logsumexp(values: np.ndarray, starts: np.ndarray,
                      seg_of_row: np.ndarray | None = None) -> np.ndarray:
    """log-sum-exp over contiguous row segments; -inf segments stay -inf."""
    if seg_of_row is None:
        seg_of_row = np.repeat(np.arange(len(starts) - 1), np.diff(starts))
    m = np.maximum.reduceat(values, starts[:-1])
    finite = np.isfinite(m)
    safe_m = np.where(finite, m, 0.0)
    # rows at -inf contribute exp(-inf) = 0; fully -inf segments short-circuit
    sums = np.add.reduceat(np.exp(values - safe_m[seg_of_row]), starts[:-1])
    with np.errstate(divide="ignore"):
        return np.where(finite, safe_m + np.log(sums), -np.inf)
