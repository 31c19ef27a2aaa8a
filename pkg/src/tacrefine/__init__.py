"""Tactile in-hand grasp pose refinement: simulator, dataset, policy network, training,
closed-loop refinement and evaluation."""

from .geometry import Transform, WristPose
from .tacsim import (HandConfig, NonContactError, ObjectModel, SensorParams, close_fingers,
                     default_hand, default_object, nominal_params, perturb_params, render_hand,
                     render_tactile)
from .dataset import (AugmentationConfig, Dataset, PairedExample, PoseBounds, SampleRecord, augment,
                      collect, cross_combine, sample_grid)
from .net import PolicyParams, backward, forward, init_params, load_params, save_params
from .train import TrainConfig, checkpoint, resume, train_policy_a, train_policy_b
from .refine import RefineConfig, pose_error, refine_loop, track
from .evaluation import (MetricThresholds, TrialResult, compare_policies, generalization_eval,
                         pose_matrix, render_report, steps_to_threshold, success_rate)

__version__ = "0.1.0"
