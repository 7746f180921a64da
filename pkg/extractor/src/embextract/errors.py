"""Extractor error types."""


class ExtractError(Exception):
    """Base class for extraction failures."""


class MissingInputError(ExtractError):
    """Dataset files or the checkpoint are not where they were expected."""


class IntegrityError(ExtractError):
    """Output dimensions or checksums disagree with the manifest."""
