"""QMIX and IQL learners, replay and the training loop."""

from .models import (Hyper, IqlModel, QmixModel, make_model, select_actions, train_step_iql,
                     train_step_qmix)
from .replay import Batch, JointTransition, ReplayBuffer, collate
from .training import EvalSummary, EpisodeResult, TrainLog, TrainingError, evaluate, run_episode, train

__all__ = [
    "Batch", "EpisodeResult", "EvalSummary", "Hyper", "IqlModel", "JointTransition",
    "QmixModel", "ReplayBuffer", "TrainLog", "TrainingError", "collate", "evaluate",
    "make_model", "run_episode", "select_actions", "train", "train_step_iql",
    "train_step_qmix",
]
