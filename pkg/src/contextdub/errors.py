"""Exception types shared across the package."""


class ShapeError(ValueError):
    """A tensor axis does not match its contract.

    The message always names the offending axis so callers can report
    which dimension broke.
    """

    def __init__(self, axis, expected, actual, context=""):
        self.axis = axis
        self.expected = expected
        self.actual = actual
        where = f" in {context}" if context else ""
        super().__init__(
            f"axis '{axis}'{where}: expected {expected}, got {actual}"
        )


class SequenceTooShortError(ValueError):
    """Input sequence is too short for the requested downsampling depth."""

    def __init__(self, time_steps, minimum, num_layers):
        self.time_steps = time_steps
        self.minimum = minimum
        super().__init__(
            f"sequence of {time_steps} steps cannot be halved {num_layers} "
            f"times; need at least {minimum} steps (input is rejected, not padded)"
        )


class UnknownSymbolError(ValueError):
    """A phoneme id falls outside the embedding vocabulary."""

    def __init__(self, symbol_id, vocab_size):
        self.symbol_id = symbol_id
        self.vocab_size = vocab_size
        super().__init__(
            f"unknown phoneme id {symbol_id} (vocabulary size {vocab_size})"
        )


class TensorFormatError(ValueError):
    """A tensor file is malformed; carries the byte offset of the problem."""

    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class ManifestError(ValueError):
    """A manifest record is inconsistent; names the sample and field."""

    def __init__(self, sample_id, field, message):
        self.sample_id = sample_id
        self.field = field
        super().__init__(f"sample '{sample_id}', field '{field}': {message}")


class ConfigError(ValueError):
    """A run configuration file could not be parsed or validated."""


class NonFiniteLossError(ArithmeticError):
    """A loss evaluation produced NaN or infinity."""

    def __init__(self, value, context=""):
        self.value = value
        where = f" while evaluating {context}" if context else ""
        super().__init__(f"non-finite loss {value!r}{where}")
