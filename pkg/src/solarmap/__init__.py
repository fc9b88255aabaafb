"""Pseudo-supervised solar panel mapping.

Trains an image-level classifier, converts its gradient attributions into
pixel-level pseudo labels, and trains an encoder-decoder mapping network whose
labels are progressively refined by rule-based correction with morphological
filtering.
"""

from .attribution import ActivationMap, GradWeights, gradcam, grad_weights, upsample_map
from .checkpoint import ModelCheckpoint, load_checkpoint, save_checkpoint
from .classifier import (
    ClassifierConfig,
    PanelClassifier,
    build_classifier,
    classifier_forward,
    classifier_forward_with_features,
    classifier_from_checkpoint,
    train_classifier,
)
from .config import PipelineConfig, load_config
from .correction import (
    CorrectionParams,
    CorrectionReport,
    CriteriaVerdict,
    LabelDecision,
    correction_step,
    decide,
    dilate,
    erode,
    evaluate_criteria,
    foreground_count,
    opening,
    refine_mask,
)
from .data import (
    DatasetManifest,
    ManifestEntry,
    SynthConfig,
    Tile,
    load_manifest,
    load_tile,
    save_manifest,
    split_dataset,
    synth_generate,
)
from .mapper import (
    MapperConfig,
    MapperModel,
    ScoreMapPair,
    build_mapper,
    foreground_weight,
    lr_schedule,
    mapper_forward,
    mapper_from_checkpoint,
    train_mapper,
    weighted_ce_loss,
)
from .metrics import (
    Confusion,
    CurvePoint,
    Report,
    accuracy,
    auc,
    confusion,
    evaluate_dataset,
    evaluate_predictions,
    f_measure,
    precision,
    recall,
    sweep_curves,
)
from .pipeline import PipelineRunner, run_pipeline
from .pseudolabels import (
    LabelRecord,
    LabelStore,
    binarize,
    build_initial_labels,
    mine_positives,
    otsu_threshold,
)

__version__ = "0.1.0"
