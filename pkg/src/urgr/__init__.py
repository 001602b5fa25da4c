"""Ultra-range gesture recognition: degradation synthesis, HQ-Net image
improvement, GViT classification and the detect-crop-improve-classify pipeline."""

from ._validation import InvalidArgument, NotFound, TrainingDiverged, URGRError
from .data import CLASS_NAMES, DatasetManifest, Sample, SynthConfig, load_manifest, synth_generate
from .estimators import Degrader, GViTClassifier, HQNetEnhancer
from .evaluation import Pipeline, urgr_infer
from .focus import BBox, FocusConfig, OracleDetector, focus_pipeline
from .gvit import GViTConfig, classify, gvit_forward
from .hqnet import HQNetConfig, hqnet_forward
from .imaging import DegradationConfig, degrade, mse, psnr

__version__ = "0.1.0"
