"""Pathology-conditioned GAN for skeleton keypoint gait sequences."""
from .data import DatasetManifest, GaitSequence, PathologyLabel, load_dataset
from .model import DiscriminatorModel, GeneratorConfig, GeneratorModel, generate, spectral_normalize
from .training import Trainer, TrainingConfig

__version__ = "0.1.0"
