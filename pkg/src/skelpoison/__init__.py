"""Physically plausible trigger injection and backdoor poisoning for 3D skeleton sequences."""
from .enhance import SurrogateModel, pgd_enhance, train_surrogate
from .errors import DataError, ParseError, SkelPoisonError
from .ik import IkConfig, IkResult, solve_ik
from .io import load_canonical, load_dataset, parse_ntu_skeleton, save_canonical, save_dataset
from .kinematics import forward_kinematics, quat_from_axis_angle, quat_multiply, rotation_matrix, two_step_rotation
from .poison import PoisonPolicy, build_poisoned_dataset, select_clean_label, select_poison_label
from .skeleton import Dataset, ManifestRecord, SkeletonSequence, SkeletonTopology, chain, default_topology, validate_sequence
from .stealth import emd, histogram, kld, stealth_report
from .synth import synth_dataset
from .trigger import TRIGGERS, TriggerInstance, get_trigger, inject_trigger, sample_trigger_instance

__version__ = "0.1.0"
