"""ECG-to-text: 12-lead ECG preprocessing, a transformer encoder aligned to a
frozen language-embedding space with an optimal-transport loss, report
decoding and zero-shot disease detection."""

from .config import PipelineConfig, load_config
from .dataset_io import CLASSES, EcgRecord, Vocab, build_vocab, read_record, tokenize
from .errors import EcgError

__all__ = ["CLASSES", "EcgError", "EcgRecord", "PipelineConfig", "Vocab", "build_vocab",
           "load_config", "read_record", "tokenize"]
__version__ = "0.1.0"
