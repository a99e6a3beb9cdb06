"""Contrastive representation learning with a forward dynamics model and curiosity rewards for pixel SAC."""

from .config import TrainConfig
from .harness import PixelSACTrainer, Trainer, evaluate, train

__all__ = ["TrainConfig", "Trainer", "PixelSACTrainer", "evaluate", "train"]
__version__ = "0.1.0"
