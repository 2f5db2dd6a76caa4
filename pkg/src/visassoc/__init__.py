"""Toolkit for mining contextualized visual associations, generating creative
captions at five degrees of abstraction, and evaluating the results."""

__version__ = "0.1.0"

from .corpus import Corpus, ImageRecord, load_corpus
from .forge import CreativeCaption, validate_caption
from .gateway import Gateway, ModelRequest, ModelResponse, ReplayBackend
from .ladder import AbstractionDegree, AssociationLadder, parse_ladder_json
from .salience import ConcretenessLexicon, SalientElement, extract_salient_elements
from .store import DatasetStore, uniqueness_by_degree

__all__ = [
    "AbstractionDegree",
    "AssociationLadder",
    "ConcretenessLexicon",
    "Corpus",
    "CreativeCaption",
    "DatasetStore",
    "Gateway",
    "ImageRecord",
    "ModelRequest",
    "ModelResponse",
    "ReplayBackend",
    "SalientElement",
    "extract_salient_elements",
    "load_corpus",
    "parse_ladder_json",
    "uniqueness_by_degree",
    "validate_caption",
]
