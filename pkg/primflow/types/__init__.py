from .config import TrainConfig
from .reports import (
    AblationRow,
    EnergyBreakdown,
    EpochMetrics,
    GradReport,
    JsdReport,
    LossBreakdown,
    MetricReport,
    PlacementEntry,
    Prediction,
    PredictionMeta,
    RecoveryReport,
)
from .trajectory import NormStats, SynthSpec, SynthTruth, Trajectory, TruthEvent, WindowSample
from .util import Matrix, Vector
