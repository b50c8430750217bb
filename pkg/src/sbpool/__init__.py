"""Two-branch bilinear pooling with a hierarchy-aware cross-entropy loss.

The package trains a small two-branch convolutional classifier whose
branches share a trunk: the coarse branch supervises broad classes, the
fine branch predicts leaf classes through second-order (Gram) pooling,
and the fine loss multiplies a sample's weight by a penalty whenever the
predicted fine class falls outside the sample's true coarse class.
"""

from .backbone import Backbone, FeatureMap, Trunk, TrunkConfig
from .data import (
    Dataset,
    Sample,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    make_batches,
    save_dataset,
)
from .gradcheck import GradCheckReport, grad_check, run_suite
from .labels import LabelTree, build_label_tree, is_violation, parse_tree, serialize_tree
from .losses import (
    BatchLabels,
    PenaltyConfig,
    PenaltyMask,
    combined_loss,
    cross_entropy,
    cross_entropy_batch,
    generalized_cross_entropy,
    loss_weights,
    penalty_mask,
    softmax,
)
from .metrics import EvalReport, evaluate
from .network import (
    ClassifierHead,
    SbpNetwork,
    bilinear_pool,
    head_forward,
    l2_normalize,
    signed_sqrt,
)
from .tensor import Parameter, make_rng
from .trainer import (
    Checkpoint,
    LrDecay,
    TrainConfig,
    TwoStep,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
    train,
)

__version__ = "0.1.0"
