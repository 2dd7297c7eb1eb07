"""Entity-aware attention network for single-shot entity extraction from document images."""
from .domain import CharVocab, DecoderState, EntitySchema, Sample, encode_targets, split_on_eos
from .metrics import EvalReport, evaluate, mea, mep_mer_mef
from .model import EatenModel, ModelConfig, state_transition
from .training import TrainConfig, loss, lr_at, sgd_step, train

__version__ = "0.1.0"
