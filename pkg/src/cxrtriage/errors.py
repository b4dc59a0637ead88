"""Exception hierarchy shared by all pipeline stages.

The CLI maps these onto its exit codes, so raising the right class matters
more than the message text.
"""


class CxrError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CxrError, ValueError):
    """Tensor/layer dimension mismatch. Message always names both shapes."""


class DomainError(CxrError, ValueError):
    """Input outside an operation's numeric domain (e.g. log of <= 0)."""


class BuildError(CxrError, ValueError):
    """Network construction failed shape-chain or width validation."""


class DataFormatError(CxrError, ValueError):
    """Archive file malformed: bad magic, length mismatch, bad hash."""


class DecodeError(CxrError, ValueError):
    """Image payload unreadable or in an unsupported container."""


class ModelFormatError(CxrError, ValueError):
    """Model file malformed or incompatible with the requested setup."""


class IngestError(CxrError, ValueError):
    """Dataset directory tree unusable (unknown class name, empty root)."""


class ConfigError(CxrError, ValueError):
    """Invalid training or CLI configuration value."""
