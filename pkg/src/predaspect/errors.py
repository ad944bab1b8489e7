class AspectError(Exception):
    """Base class for every error raised by this package."""


class EmbeddingFormatError(AspectError):
    pass


class CorpusFormatError(AspectError):
    pass


class DatasetError(AspectError):
    pass


class TrainingError(AspectError):
    pass


class ProtocolError(AspectError):
    pass
