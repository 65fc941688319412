"""Backdoor-attack laboratory for a frozen toy dual-encoder classifier.

Implements prompt-learning backdoor injection with a learnable bounded noise
trigger plus patch compositing, fixed-trigger and fine-tuning baselines, and a
config-driven evaluation harness (CA/BA metrics, ablation grids, feature
export).
"""

from .attack import AttackConfig, AttackResult, attack_loss, baple_step, run_baple
from .data import (
    Dataset,
    DatasetSpec,
    FewShotSubset,
    generate_synthetic_dataset,
    sample_few_shot,
)
from .errors import BapleError
from .model import (
    ClassPromptSet,
    DualEncoder,
    ModelConfig,
    PromptState,
    pretrain_contrastive,
    zero_shot_predict,
)
from .poison import PoisonPlan, TargetLabelFn, make_poison_plan
from .triggers import (
    FibaSpec,
    NoiseState,
    PatchSpec,
    WarpField,
    apply_patch,
    clip_noise,
    inject_backdoor,
)

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "AttackResult", "attack_loss", "baple_step", "run_baple",
    "Dataset", "DatasetSpec", "FewShotSubset", "generate_synthetic_dataset",
    "sample_few_shot", "BapleError", "ClassPromptSet", "DualEncoder",
    "ModelConfig", "PromptState", "pretrain_contrastive", "zero_shot_predict",
    "PoisonPlan", "TargetLabelFn", "make_poison_plan", "FibaSpec", "NoiseState",
    "PatchSpec", "WarpField", "apply_patch", "clip_noise", "inject_backdoor",
    "__version__",
]
