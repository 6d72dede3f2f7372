"""Illustrative four-class travel mode example.

A ready-made specification and coefficient set for a commute mode choice
setting with seven alternatives, five level-of-service attributes and three
membership covariates.  The four classes differ in which modes they
consider and how sensitive they are to service levels: habitual drivers
(evaluate everything, mostly drive), captive bus riders (bus only, with
service sensitivities expressed through the surplus channel), bus-metro
combiners, and auto-metro combiners.  Values are of realistic magnitude
for demonstration and testing; they are not estimates from any dataset
shipped here.

``four_style_example()`` returns (spec, params); ``example_panel`` draws a
synthetic panel consistent with the schemas so scenario pipelines can run
end to end.
"""

from __future__ import annotations

import numpy as np

from .model import ClassSpec, ModelSpec, ParameterSet, zero_params
from .simulation import GenerativeConfig, generate_panel

MODES = ("auto", "metro", "bus", "walk", "bike", "auto_metro", "bus_metro")
ATTRIBUTES = ("travel_time", "walk_time", "travel_cost", "waiting_time",
              "n_transfers")
COVARIATES = ("income", "male", "n_vehicles")


def four_style_example() -> tuple[ModelSpec, ParameterSet]:
    classes = (
        ClassSpec(
            name="drivers",
            consideration_set=MODES,
            reference_alt="auto",
            coef_fixed={"n_transfers": 0.0},
        ),
        ClassSpec(
            name="bus_riders",
            consideration_set=("bus",),
            reference_alt="bus",
        ),
        ClassSpec(
            name="bus_metro",
            consideration_set=("metro", "bus", "bus_metro"),
            reference_alt="metro",
        ),
        ClassSpec(
            name="auto_metro",
            consideration_set=("auto", "metro", "auto_metro"),
            reference_alt="auto",
            coef_fixed={"n_transfers": 0.0},
        ),
    )
    spec = ModelSpec(
        classes=classes,
        attributes=ATTRIBUTES,
        covariates=COVARIATES,
        use_cs=True,
        # one loading pinned for identification, two channels switched off
        alpha_fixed={(0, 1): 1.0, (0, 3): 0.0, (3, 3): 0.0},
    )

    params = zero_params(spec)
    t0, t1, t2, t3 = params.class_tastes

    t0.asc.update({"metro": -3.925, "bus": -4.259, "walk": 1.935,
                   "bike": -0.710, "auto_metro": -3.440, "bus_metro": -3.618})
    t0.coeffs[:] = [-0.028, -0.041, -0.006, -0.024, 0.0]

    t1.coeffs[:] = [-0.042, -0.002, -0.061, -0.038, -2.633]

    t2.asc.update({"bus": -7.644, "bus_metro": 2.208})
    t2.coeffs[:] = [-0.091, -0.127, -0.102, -0.293, -1.136]

    t3.asc.update({"metro": 2.293, "auto_metro": 4.441})
    t3.coeffs[:] = [-0.069, -0.103, -0.080, -0.053, 0.0]

    # initialization logit: [const, income, male, n_vehicles], class 1 reference
    params.init.tau[1] = [2.993, -0.510, 0.223, -0.992]
    params.init.tau[2] = [-0.073, -0.060, 0.635, -0.739]
    params.init.tau[3] = [0.139, -0.190, 0.519, -0.295]

    gamma = params.trans.gamma
    gamma[0, 1] = [0.900, -0.170, 0.671, -0.385]
    gamma[0, 2] = [1.351, -0.610, -1.178, -0.416]
    gamma[0, 3] = [-2.175, -0.080, 0.359, -0.365]
    gamma[1, 1] = [4.833, -0.680, 1.831, 0.595]
    gamma[1, 2] = [2.060, -0.310, 1.056, -0.130]
    gamma[1, 3] = [1.223, -0.500, 0.999, -0.378]
    gamma[2, 1] = [2.480, -1.150, 0.635, -1.506]
    gamma[2, 2] = [0.936, -0.090, 1.801, -1.143]
    gamma[2, 3] = [1.391, -0.930, -0.641, 0.184]
    gamma[3, 1] = [1.064, -0.370, 1.840, -1.805]
    gamma[3, 2] = [0.636, -0.060, 1.030, -0.163]
    gamma[3, 3] = [0.968, 0.050, 0.040, 0.142]

    params.trans.alpha[:] = [
        [0.594, 1.000, 0.264, 0.0],
        [0.330, 0.500, 0.155, 0.317],
        [1.709, 0.140, 0.097, 0.364],
        [0.088, 0.094, 0.083, 0.0],
    ]
    return spec, params


def example_panel(n_individuals: int = 150, n_waves: int = 4,
                  situations_per_wave: int = 3, seed: int = 7):
    """Synthetic panel matching the example's schemas.

    Attribute draws are scaled so systematic utilities stay in a sane range
    (times in minutes, costs in hundreds of local currency units, income in
    hundred-thousands).
    """
    spec, params = four_style_example()
    config = GenerativeConfig(
        spec=spec,
        true_params=params,
        n_individuals=n_individuals,
        n_waves=n_waves,
        situations_per_wave=situations_per_wave,
        covariate_generators={
            "income": {"kind": "lognormal", "mean": 1.8, "sd": 0.5},
            "male": {"kind": "bernoulli", "p": 0.5},
            "n_vehicles": {"kind": "poisson", "lam": 1.1},
        },
        attribute_generators={
            "travel_time": {"kind": "uniform", "low": 10.0, "high": 60.0},
            "walk_time": {"kind": "uniform", "low": 2.0, "high": 20.0},
            "travel_cost": {"kind": "uniform", "low": 2.0, "high": 30.0},
            "waiting_time": {"kind": "uniform", "low": 0.0, "high": 15.0},
            "n_transfers": {"kind": "uniform", "low": 0.0, "high": 2.0},
        },
        seed=seed,
    )
    return generate_panel(config)


def income_scenario(factor: float = 1.10, waves=(5, 6, 7)):
    """Raise household income at the given future waves."""
    from .forecast import CovariateTransform, Scenario

    return Scenario(
        name=f"income_x{factor:.2f}",
        covariate_transforms=(
            CovariateTransform("income", "scale", factor, tuple(waves)),
        ),
    )


def bus_time_scenario(factor: float = 0.85, waves=None):
    """Cut in-vehicle travel time for bus and bus-metro service."""
    from .forecast import AttributeTransform, Scenario

    return Scenario(
        name=f"bus_time_x{factor:.2f}",
        attribute_transforms=(
            AttributeTransform("travel_time", ("bus", "bus_metro"), "scale",
                               factor, tuple(waves) if waves else None),
        ),
    )
