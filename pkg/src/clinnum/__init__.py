"""Classify and assess numeric values in French clinical notes."""

from .blinding import PLACEHOLDER, blind, project_predictions
from .criticality import CriticalityVerdict, PatientContext, RangePolicy, Status, ThresholdTables, assess
from .labels import ClassLabel
from .lesa import LesaParams, lesa_backward, lesa_forward
from .metrics import f1_per_class, macro_f1
from .model import ModelConfig, TokenClassifier, Vocab
from .tokenizer import Token, TokenKind, parse_numeric, tokenize

__version__ = "0.1.0"

__all__ = [
    "PLACEHOLDER", "blind", "project_predictions",
    "CriticalityVerdict", "PatientContext", "RangePolicy", "Status", "ThresholdTables", "assess",
    "ClassLabel", "LesaParams", "lesa_backward", "lesa_forward", "f1_per_class", "macro_f1",
    "ModelConfig", "TokenClassifier", "Vocab", "Token", "TokenKind", "parse_numeric", "tokenize",
]
