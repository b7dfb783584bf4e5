"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An operation was called with arguments that break its contract."""


class DecodeError(ValueError):
    """A position bitstream could not be decoded.

    ``bit_position`` is the offset (in bits, from the start of the stream)
    at which decoding failed.
    """

    def __init__(self, message, bit_position):
        super().__init__(f"{message} (at bit {bit_position})")
        self.bit_position = bit_position


class ConfigError(ValueError):
    """An experiment config failed validation.

    ``errors`` holds every problem found, each as ``(line_number, message)``
    with ``line_number`` 0 for file-level issues.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        lines = "; ".join(f"line {ln}: {msg}" if ln else msg for ln, msg in self.errors)
        super().__init__(lines)
