"""Class-aware feature regularization for semantic segmentation, desk scale."""

from .attention import AttentionConfig, SaaMixer, attention_flops, axial_attention_core
from .centers import ClassCenters, LabelField, batch_centers, distribute_centers, flatten_pair
from .losses import CarConfig, CarTerms, car_total, inter_c2c_loss, inter_c2p_loss, intra_c2p_loss
from .model import Backbone, ModelConfig, SegModel, cross_entropy_loss, poly_lr
from .tensor import IGNORE, NumericError, ShapeError, Tensor
from .upsampling import Ejpu, FeaturePyramid

__all__ = [
    "AttentionConfig", "SaaMixer", "attention_flops", "axial_attention_core",
    "ClassCenters", "LabelField", "batch_centers", "distribute_centers", "flatten_pair",
    "CarConfig", "CarTerms", "car_total", "inter_c2c_loss", "inter_c2p_loss", "intra_c2p_loss",
    "Backbone", "ModelConfig", "SegModel", "cross_entropy_loss", "poly_lr",
    "IGNORE", "NumericError", "ShapeError", "Tensor",
    "Ejpu", "FeaturePyramid",
]
