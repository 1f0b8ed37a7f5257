"""Exception types shared across the package."""


class MMRagError(Exception):
    pass


class ParseError(MMRagError, ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.reason = message
        self.offset = offset


class DateFormatError(MMRagError, ValueError):
    pass


class SchemaError(MMRagError, ValueError):
    def __init__(self, index, field, message=None):
        super().__init__(message or f"record {index}: missing or invalid field {field!r}")
        self.index = index
        self.field = field


class DimensionMismatch(MMRagError, ValueError):
    def __init__(self, expected, got):
        super().__init__(f"embedding dimension mismatch: expected {expected}, got {got}")
        self.expected = expected
        self.got = got


class FormatError(MMRagError, ValueError):
    pass


class ProviderError(MMRagError):
    def __init__(self, message, retryable=False, status=None):
        super().__init__(message)
        self.retryable = retryable
        self.status = status
        self.message = message


class FixtureMiss(ProviderError):
    def __init__(self, prompt_hash):
        super().__init__(f"no scripted response for prompt {prompt_hash}", retryable=False)
        self.prompt_hash = prompt_hash


class AlignmentError(MMRagError, ValueError):
    pass


class EmptyQuerySet(MMRagError, ValueError):
    pass


class ConfigError(MMRagError, ValueError):
    pass
