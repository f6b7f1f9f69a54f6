"""Classifier, Grad-CAM, CRF refinement and multi-threshold CAM masks."""
from .classifier import Classifier, cross_entropy, train_classifier
from .crf import CrfParams, crf_refine
from .gradcam import channel_weights, grad_cam, grad_cam_batch, raw_cam
from .pipeline import audit_nesting, generate_cams, load_cams, save_cams
from .thresholds import CamThresholds, CamTriple, threshold_cams

__all__ = [
    "CamThresholds",
    "CamTriple",
    "Classifier",
    "CrfParams",
    "audit_nesting",
    "channel_weights",
    "crf_refine",
    "cross_entropy",
    "generate_cams",
    "grad_cam",
    "grad_cam_batch",
    "load_cams",
    "raw_cam",
    "save_cams",
    "threshold_cams",
    "train_classifier",
]
