"""Fine-grained (token-wise late-interaction) contrastive image-text pre-training in numpy."""

from .config import TrainConfig, load_config, parse_config
from .encoders import EncodedFeatures, ImageEncoderConfig, TextEncoderConfig
from .late_interaction import EfficiencyConfig, SimilarityPair, batch_similarity, global_similarity
from .model import DualEncoder
from .objective import total_loss
from .optim import lamb_step, lr_at, peak_lr
from .tensor import Tensor, backward, no_grad
from .tokenizer import Vocabulary, build_vocab, encode, token_spans

__version__ = "0.1.0"

__all__ = [
    "DualEncoder", "EfficiencyConfig", "EncodedFeatures", "ImageEncoderConfig", "SimilarityPair", "Tensor",
    "TextEncoderConfig", "TrainConfig", "Vocabulary", "backward", "batch_similarity", "build_vocab", "encode",
    "global_similarity", "lamb_step", "load_config", "lr_at", "no_grad", "parse_config", "peak_lr",
    "token_spans", "total_loss",
]
