from mautrix.util.logging import TraceLogger  # noqa: F401  installs the trace-capable logger class

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .dispatcher import CheckpointSaved, EpochFinished, TrainingDiverged, TrainingStarted
from .errors import PrimflowError
from .flowgen import ContextEncoder, VelocityNet, predict, sample_trajectories
from .primdict import Dictionary
from .trainer import CompositionalModel, Trainer, joint_loss
