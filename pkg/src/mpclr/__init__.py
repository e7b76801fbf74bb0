"""Privacy-preserving linear regression over additively shared data.

A trusted initializer hands out correlated randomness offline; data holders
then train and evaluate linear models over a prime field without revealing
their rows to each other. Submodules: field arithmetic and fixed-point
encoding, additive sharing, initializer material, online protocols, the
regression workflows, the relay transport, and the experiment harness.
"""

from mpclr.field import (
    DEFAULT_E,
    DEFAULT_F,
    FieldElement,
    FieldParams,
    FixedPointCodec,
    make_params,
)
from mpclr.harness import (
    RunReport,
    ScenarioConfig,
    drowsiness_index,
    ingest_csv,
    label_response_times,
    run_scenario,
    smooth_moving_average,
    synthesize_dataset,
)
from mpclr.regression import (
    LocalDataset,
    ModelShareTC,
    ModelShareTI,
    WorkflowConfig,
    infer_tc,
    infer_ti,
    train_tc,
    train_ti,
)

__all__ = [
    "DEFAULT_E",
    "DEFAULT_F",
    "FieldElement",
    "FieldParams",
    "FixedPointCodec",
    "LocalDataset",
    "ModelShareTC",
    "ModelShareTI",
    "RunReport",
    "ScenarioConfig",
    "WorkflowConfig",
    "drowsiness_index",
    "infer_tc",
    "infer_ti",
    "ingest_csv",
    "label_response_times",
    "make_params",
    "run_scenario",
    "smooth_moving_average",
    "synthesize_dataset",
    "train_tc",
    "train_ti",
]

__version__ = "0.1.0"
