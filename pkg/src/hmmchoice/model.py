"""Model specification and parameter containers.

A model is described by :class:`ModelSpec` (number of latent classes, each
class's consideration set, which covariates enter the initialization and
transition models, and the table of fixed-to-value constraints) and a
:class:`ParameterSet` holding the current numeric values for every block:

* per-class tastes (alternative-specific constants and attribute
  coefficients),
* initialization logit coefficients (one vector per class, class 1 is the
  reference and is pinned to zero),
* transition logit coefficients per origin class (destination class 1 is the
  reference) plus the nonnegative surplus loadings that feed the expected
  maximum utility of each destination class back into the transition.

The module also owns the packing of free parameters into a flat vector for
the optimizers (surplus loadings travel through a softplus map so the
nonnegativity constraint holds by construction) and JSON (de)serialization.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np

CONST = "const"  # name of the intercept term in init/transition blocks


class SpecError(ValueError):
    """Raised when a model specification is internally inconsistent."""


@dataclass(frozen=True)
class ClassSpec:
    """Structure of one latent class.

    Parameters
    ----------
    name : str
        Label used in reports and serialized output.
    consideration_set : tuple of str
        Alternatives this class evaluates; everything else gets zero choice
        probability.
    reference_alt : str
        The alternative whose constant is pinned to zero for identification.
    asc_fixed : mapping alt_id -> value
        Additional constants held at a fixed value during estimation.
    coef_fixed : mapping attribute -> value
        Attribute coefficients held at a fixed value (0.0 excludes the
        attribute from this class's utility).
    """

    name: str
    consideration_set: tuple[str, ...]
    reference_alt: str
    asc_fixed: Mapping[str, float] = field(default_factory=dict)
    coef_fixed: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.consideration_set:
            raise SpecError(f"class {self.name!r}: empty consideration set")
        if len(set(self.consideration_set)) != len(self.consideration_set):
            raise SpecError(f"class {self.name!r}: duplicate alternatives")
        if self.reference_alt not in self.consideration_set:
            raise SpecError(
                f"class {self.name!r}: reference {self.reference_alt!r} not in "
                "consideration set"
            )
        if self.reference_alt in self.asc_fixed:
            raise SpecError(
                f"class {self.name!r}: reference constant is already fixed to 0"
            )
        for alt in self.asc_fixed:
            if alt not in self.consideration_set:
                raise SpecError(
                    f"class {self.name!r}: fixed constant for {alt!r} which is "
                    "outside the consideration set"
                )

    def free_ascs(self) -> list[str]:
        return [
            a
            for a in self.consideration_set
            if a != self.reference_alt and a not in self.asc_fixed
        ]


@dataclass(frozen=True)
class ModelSpec:
    """Full specification: classes, covariate selections, constraint table.

    ``tau_fixed`` keys are ``(class_index, term)``, ``gamma_fixed`` keys are
    ``(origin, destination, term)`` and ``alpha_fixed`` keys are
    ``(origin, destination)``; class indices are 0-based and ``term`` is
    either ``"const"`` or a covariate name.  Class 0 is the reference class
    of the initialization logit and the reference destination of every
    transition logit.  When ``use_cs`` is false all surplus loadings are
    fixed at zero (the separable model that EM can estimate); when true they
    are free and nonnegative unless pinned via ``alpha_fixed``.
    """

    classes: tuple[ClassSpec, ...]
    attributes: tuple[str, ...]
    covariates: tuple[str, ...] = ()
    init_covariates: tuple[str, ...] | None = None
    trans_covariates: tuple[str, ...] | None = None
    use_cs: bool = False
    tau_fixed: Mapping[tuple[int, str], float] = field(default_factory=dict)
    gamma_fixed: Mapping[tuple[int, int, str], float] = field(default_factory=dict)
    alpha_fixed: Mapping[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.classes:
            raise SpecError("need at least one class")
        if self.init_covariates is None:
            object.__setattr__(self, "init_covariates", tuple(self.covariates))
        if self.trans_covariates is None:
            object.__setattr__(self, "trans_covariates", tuple(self.covariates))
        for sel in (self.init_covariates, self.trans_covariates):
            for c in sel:
                if c not in self.covariates:
                    raise SpecError(f"covariate {c!r} not in schema {self.covariates}")
        for cls in self.classes:
            for attr in cls.coef_fixed:
                if attr not in self.attributes:
                    raise SpecError(
                        f"class {cls.name!r}: fixed coefficient for unknown "
                        f"attribute {attr!r}"
                    )
        S = len(self.classes)
        for (s, term), _ in self.tau_fixed.items():
            self._check_cell(s, term, self.init_covariates, "tau_fixed")
            if s == 0:
                raise SpecError("class 0 is the initialization reference; its "
                                "parameters are structurally zero")
        for (r, s, term), _ in self.gamma_fixed.items():
            if not 0 <= r < S:
                raise SpecError(f"gamma_fixed: origin {r} out of range")
            self._check_cell(s, term, self.trans_covariates, "gamma_fixed")
            if s == 0:
                raise SpecError("class 0 is the transition destination reference; "
                                "its parameters are structurally zero")
        for (r, s), v in self.alpha_fixed.items():
            if not (0 <= r < S and 0 <= s < S):
                raise SpecError(f"alpha_fixed: cell ({r}, {s}) out of range")
            if v < 0:
                raise SpecError(f"alpha_fixed[{r}, {s}] = {v} violates alpha >= 0")

    def _check_cell(self, s, term, selection, label):
        if not 0 <= s < len(self.classes):
            raise SpecError(f"{label}: class {s} out of range")
        if term != CONST and term not in selection:
            raise SpecError(f"{label}: unknown term {term!r}")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def init_terms(self) -> tuple[str, ...]:
        return (CONST,) + tuple(self.init_covariates)

    def trans_terms(self) -> tuple[str, ...]:
        return (CONST,) + tuple(self.trans_covariates)

    def alpha_is_fixed(self, r: int, s: int) -> bool:
        return (not self.use_cs) or (r, s) in self.alpha_fixed

    def alpha_fixed_value(self, r: int, s: int) -> float:
        if not self.use_cs:
            return 0.0
        return float(self.alpha_fixed[(r, s)])

    def mode_universe(self) -> tuple[str, ...]:
        """Union of consideration sets, in first-appearance order."""
        seen: dict[str, None] = {}
        for cls in self.classes:
            for alt in cls.consideration_set:
                seen.setdefault(alt)
        return tuple(seen)


@dataclass
class ClassTasteParams:
    """Constants and attribute coefficients of one class's choice model."""

    asc: dict[str, float]
    coeffs: np.ndarray  # aligned with ModelSpec.attributes

    def copy(self) -> "ClassTasteParams":
        return ClassTasteParams(dict(self.asc), self.coeffs.copy())


@dataclass
class InitParams:
    """Initialization logit coefficients, shape (S, 1 + n_init_covariates).

    Row s holds [const, covariates...] for class s; row 0 is the reference
    and stays identically zero.
    """

    tau: np.ndarray

    def copy(self) -> "InitParams":
        return InitParams(self.tau.copy())


@dataclass
class TransParams:
    """Transition logit coefficients and surplus loadings.

    ``gamma`` has shape (S, S, 1 + n_trans_covariates) indexed by
    [origin, destination, term]; the destination-0 slice stays zero.
    ``alpha`` has shape (S, S), indexed by [origin, destination], all
    entries nonnegative.
    """

    gamma: np.ndarray
    alpha: np.ndarray

    def copy(self) -> "TransParams":
        return TransParams(self.gamma.copy(), self.alpha.copy())


@dataclass
class ParameterSet:
    """All parameter blocks of the model."""

    class_tastes: tuple[ClassTasteParams, ...]
    init: InitParams
    trans: TransParams

    def copy(self) -> "ParameterSet":
        return ParameterSet(
            tuple(t.copy() for t in self.class_tastes),
            self.init.copy(),
            self.trans.copy(),
        )


def zero_params(spec: ModelSpec) -> ParameterSet:
    """A ParameterSet with every free cell at 0 and fixed cells at their values."""
    S = spec.n_classes
    tastes = []
    for cls in spec.classes:
        asc = {a: 0.0 for a in cls.consideration_set}
        asc.update({a: float(v) for a, v in cls.asc_fixed.items()})
        coeffs = np.zeros(len(spec.attributes))
        for attr, v in cls.coef_fixed.items():
            coeffs[spec.attributes.index(attr)] = v
        tastes.append(ClassTasteParams(asc, coeffs))
    init = InitParams(np.zeros((S, 1 + len(spec.init_covariates))))
    for (s, term), v in spec.tau_fixed.items():
        init.tau[s, spec.init_terms().index(term)] = v
    gamma = np.zeros((S, S, 1 + len(spec.trans_covariates)))
    for (r, s, term), v in spec.gamma_fixed.items():
        gamma[r, s, spec.trans_terms().index(term)] = v
    alpha = np.zeros((S, S))
    if spec.use_cs:
        for (r, s), v in spec.alpha_fixed.items():
            alpha[r, s] = v
    trans = TransParams(gamma, alpha)
    return ParameterSet(tuple(tastes), init, trans)


def validate_params(params: ParameterSet, spec: ModelSpec, atol: float = 0.0):
    """Check that fixed cells hold their values and alpha >= 0."""
    S = spec.n_classes
    if len(params.class_tastes) != S:
        raise SpecError("parameter set has wrong number of classes")
    for s, (cls, taste) in enumerate(zip(spec.classes, params.class_tastes)):
        if set(taste.asc) != set(cls.consideration_set):
            raise SpecError(f"class {cls.name!r}: constants do not cover the "
                            "consideration set")
        if abs(taste.asc[cls.reference_alt]) > atol:
            raise SpecError(f"class {cls.name!r}: reference constant nonzero")
        for alt, v in cls.asc_fixed.items():
            if abs(taste.asc[alt] - v) > atol:
                raise SpecError(f"class {cls.name!r}: fixed constant {alt!r} moved")
        for attr, v in cls.coef_fixed.items():
            if abs(taste.coeffs[spec.attributes.index(attr)] - v) > atol:
                raise SpecError(f"class {cls.name!r}: fixed coefficient {attr!r} moved")
    if np.abs(params.init.tau[0]).max() > atol:
        raise SpecError("reference class initialization parameters nonzero")
    for (s, term), v in spec.tau_fixed.items():
        if abs(params.init.tau[s, spec.init_terms().index(term)] - v) > atol:
            raise SpecError(f"fixed initialization cell ({s}, {term}) moved")
    if np.abs(params.trans.gamma[:, 0, :]).max() > atol:
        raise SpecError("reference destination transition parameters nonzero")
    for (r, s, term), v in spec.gamma_fixed.items():
        if abs(params.trans.gamma[r, s, spec.trans_terms().index(term)] - v) > atol:
            raise SpecError(f"fixed transition cell ({r}, {s}, {term}) moved")
    if params.trans.alpha.min() < 0:
        raise SpecError("negative surplus loading")
    for r in range(S):
        for s in range(S):
            if spec.alpha_is_fixed(r, s):
                v = spec.alpha_fixed_value(r, s)
                if abs(params.trans.alpha[r, s] - v) > atol:
                    raise SpecError(f"fixed surplus loading ({r}, {s}) moved")


# ---------------------------------------------------------------------------
# Free-parameter indexing and packing


@dataclass(frozen=True)
class FreeCell:
    """Address of one free scalar: block in {'asc','coef','tau','gamma','alpha'}."""

    block: str
    idx: tuple
    name: str


def free_cells(spec: ModelSpec) -> list[FreeCell]:
    """Canonical ordering of every free scalar parameter."""
    cells: list[FreeCell] = []
    for s, cls in enumerate(spec.classes):
        for alt in cls.free_ascs():
            cells.append(FreeCell("asc", (s, alt), f"class{s + 1}:asc:{alt}"))
        for j, attr in enumerate(spec.attributes):
            if attr not in cls.coef_fixed:
                cells.append(FreeCell("coef", (s, j), f"class{s + 1}:{attr}"))
    terms_i = spec.init_terms()
    for s in range(1, spec.n_classes):
        for j, term in enumerate(terms_i):
            if (s, term) not in spec.tau_fixed:
                cells.append(FreeCell("tau", (s, j), f"init:class{s + 1}:{term}"))
    terms_t = spec.trans_terms()
    for r in range(spec.n_classes):
        for s in range(1, spec.n_classes):
            for j, term in enumerate(terms_t):
                if (r, s, term) not in spec.gamma_fixed:
                    cells.append(
                        FreeCell("gamma", (r, s, j), f"trans:{r + 1}->{s + 1}:{term}")
                    )
    for r in range(spec.n_classes):
        for s in range(spec.n_classes):
            if not spec.alpha_is_fixed(r, s):
                cells.append(
                    FreeCell("alpha", (r, s), f"trans:{r + 1}->{s + 1}:cs_weight")
                )
    return cells


def n_free_params(spec: ModelSpec) -> int:
    return len(free_cells(spec))


def softplus(a):
    # log(1 + e^a), stable for large |a|
    a = np.asarray(a, dtype=float)
    return np.logaddexp(0.0, a)


def softplus_inv(v):
    v = np.asarray(v, dtype=float)
    with np.errstate(divide="ignore"):
        return v + np.log(-np.expm1(-v))


def _cell_get(params: ParameterSet, cell: FreeCell) -> float:
    if cell.block == "asc":
        s, alt = cell.idx
        return params.class_tastes[s].asc[alt]
    if cell.block == "coef":
        s, j = cell.idx
        return params.class_tastes[s].coeffs[j]
    if cell.block == "tau":
        s, j = cell.idx
        return params.init.tau[s, j]
    if cell.block == "gamma":
        r, s, j = cell.idx
        return params.trans.gamma[r, s, j]
    r, s = cell.idx
    return params.trans.alpha[r, s]


def _cell_set(params: ParameterSet, cell: FreeCell, value: float):
    if cell.block == "asc":
        s, alt = cell.idx
        params.class_tastes[s].asc[alt] = value
    elif cell.block == "coef":
        s, j = cell.idx
        params.class_tastes[s].coeffs[j] = value
    elif cell.block == "tau":
        s, j = cell.idx
        params.init.tau[s, j] = value
    elif cell.block == "gamma":
        r, s, j = cell.idx
        params.trans.gamma[r, s, j] = value
    else:
        r, s = cell.idx
        params.trans.alpha[r, s] = value


def pack(params: ParameterSet, spec: ModelSpec, transform_alpha: bool = False) -> np.ndarray:
    """Flatten free cells into a vector (optionally alpha -> softplus preimage)."""
    cells = free_cells(spec)
    x = np.array([_cell_get(params, c) for c in cells], dtype=float)
    if transform_alpha:
        for i, c in enumerate(cells):
            if c.block == "alpha":
                x[i] = softplus_inv(max(x[i], 1e-12))
    return x


def unpack(x: np.ndarray, spec: ModelSpec, transform_alpha: bool = False) -> ParameterSet:
    """Inverse of :func:`pack`; fixed cells come from the spec."""
    cells = free_cells(spec)
    if len(x) != len(cells):
        raise ValueError(f"expected {len(cells)} free parameters, got {len(x)}")
    params = zero_params(spec)
    for v, c in zip(x, cells):
        if c.block == "alpha" and transform_alpha:
            v = float(softplus(v))
        _cell_set(params, c, float(v))
    return params


# ---------------------------------------------------------------------------
# JSON serialization


def spec_to_json(spec: ModelSpec) -> dict:
    return {
        "classes": [
            {
                "name": c.name,
                "consideration_set": list(c.consideration_set),
                "reference_alt": c.reference_alt,
                "asc_fixed": dict(c.asc_fixed),
                "coef_fixed": dict(c.coef_fixed),
            }
            for c in spec.classes
        ],
        "attributes": list(spec.attributes),
        "covariates": list(spec.covariates),
        "init_covariates": list(spec.init_covariates),
        "trans_covariates": list(spec.trans_covariates),
        "use_cs": spec.use_cs,
        "tau_fixed": [
            {"class": s, "term": t, "value": v} for (s, t), v in spec.tau_fixed.items()
        ],
        "gamma_fixed": [
            {"from": r, "to": s, "term": t, "value": v}
            for (r, s, t), v in spec.gamma_fixed.items()
        ],
        "alpha_fixed": [
            {"from": r, "to": s, "value": v} for (r, s), v in spec.alpha_fixed.items()
        ],
    }


def spec_from_json(doc: dict) -> ModelSpec:
    return ModelSpec(
        classes=tuple(
            ClassSpec(
                name=c["name"],
                consideration_set=tuple(c["consideration_set"]),
                reference_alt=c["reference_alt"],
                asc_fixed=dict(c.get("asc_fixed", {})),
                coef_fixed=dict(c.get("coef_fixed", {})),
            )
            for c in doc["classes"]
        ),
        attributes=tuple(doc["attributes"]),
        covariates=tuple(doc.get("covariates", [])),
        init_covariates=tuple(doc["init_covariates"]) if "init_covariates" in doc else None,
        trans_covariates=tuple(doc["trans_covariates"]) if "trans_covariates" in doc else None,
        use_cs=bool(doc.get("use_cs", False)),
        tau_fixed={(d["class"], d["term"]): d["value"] for d in doc.get("tau_fixed", [])},
        gamma_fixed={
            (d["from"], d["to"], d["term"]): d["value"]
            for d in doc.get("gamma_fixed", [])
        },
        alpha_fixed={(d["from"], d["to"]): d["value"] for d in doc.get("alpha_fixed", [])},
    )


def params_to_json(params: ParameterSet, spec: ModelSpec) -> dict:
    """Serialize values block by block, annotating fixed cells."""
    terms_i = spec.init_terms()
    terms_t = spec.trans_terms()
    classes = []
    for s, (cls, taste) in enumerate(zip(spec.classes, params.class_tastes)):
        classes.append(
            {
                "name": cls.name,
                "consideration_set": list(cls.consideration_set),
                "asc": {a: taste.asc[a] for a in cls.consideration_set},
                "coefficients": {a: float(v) for a, v in zip(spec.attributes, taste.coeffs)},
                "fixed": sorted(
                    [f"asc:{cls.reference_alt}"]
                    + [f"asc:{a}" for a in cls.asc_fixed]
                    + [f"coef:{a}" for a in cls.coef_fixed]
                ),
            }
        )
    init_block = []
    for s in range(spec.n_classes):
        init_block.append(
            {
                "class": s + 1,
                "terms": {t: float(v) for t, v in zip(terms_i, params.init.tau[s])},
                "reference": s == 0,
                "fixed": [t for (si, t) in spec.tau_fixed if si == s],
            }
        )
    trans_block = []
    for r in range(spec.n_classes):
        dests = []
        for s in range(spec.n_classes):
            dests.append(
                {
                    "class": s + 1,
                    "terms": {t: float(v) for t, v in zip(terms_t, params.trans.gamma[r, s])},
                    "cs_weight": float(params.trans.alpha[r, s]),
                    "cs_weight_fixed": spec.alpha_is_fixed(r, s),
                    "reference": s == 0,
                    "fixed": [t for (ri, si, t) in spec.gamma_fixed if (ri, si) == (r, s)],
                }
            )
        trans_block.append({"origin": r + 1, "destinations": dests})
    return {
        "classes": classes,
        "initialization": {"terms": list(terms_i), "per_class": init_block},
        "transition": {"terms": list(terms_t), "per_origin": trans_block},
    }


def params_from_json(doc: dict, spec: ModelSpec) -> ParameterSet:
    params = zero_params(spec)
    for s, (cls, blk) in enumerate(zip(spec.classes, doc["classes"])):
        taste = params.class_tastes[s]
        for a in cls.consideration_set:
            taste.asc[a] = float(blk["asc"][a])
        for j, attr in enumerate(spec.attributes):
            taste.coeffs[j] = float(blk["coefficients"][attr])
    terms_i = spec.init_terms()
    for blk in doc["initialization"]["per_class"]:
        s = blk["class"] - 1
        for j, t in enumerate(terms_i):
            params.init.tau[s, j] = float(blk["terms"][t])
    terms_t = spec.trans_terms()
    for origin in doc["transition"]["per_origin"]:
        r = origin["origin"] - 1
        for blk in origin["destinations"]:
            s = blk["class"] - 1
            for j, t in enumerate(terms_t):
                params.trans.gamma[r, s, j] = float(blk["terms"][t])
            params.trans.alpha[r, s] = float(blk["cs_weight"])
    validate_params(params, spec, atol=1e-12)
    return params


def save_json(doc: dict, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
