"""One-shot embedding extraction from frozen backbones into EMB1 files."""

from .errors import ExtractError, IntegrityError, MissingInputError
from .extract import ExtractSpec, extract

__version__ = "0.1.0"
