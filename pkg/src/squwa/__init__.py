"""Signal-quality weighted CNN-LSTM attention for atrial fibrillation detection from PPG."""
from squwa.core import AF, NON_AF, PPGRecord
from squwa.sq_model import SQModel, SQModelConfig, train_sq
from squwa.synth import Corpus, SynthConfig, generate_corpus, read_corpus, write_corpus
from squwa.trainer import TrainConfig, train
from squwa.variants import VARIANT_BLOCKS, VARIANTS, ModelConfig, SQUWAModel, VariantConfig, build_variant

__version__ = "0.1.0"

__all__ = [
    "AF", "NON_AF", "PPGRecord", "SQModel", "SQModelConfig", "train_sq", "Corpus", "SynthConfig",
    "generate_corpus", "read_corpus", "write_corpus", "TrainConfig", "train", "VARIANT_BLOCKS", "VARIANTS",
    "ModelConfig", "SQUWAModel", "VariantConfig", "build_variant",
]
