"""Exception types shared across the package."""


class UsageError(ValueError):
    """Caller violated a precondition (bad shapes, empty batch, infeasible spec)."""


class NumericError(FloatingPointError):
    """A non-finite value appeared during evaluation or an update."""

    def __init__(self, message, coordinate=None, context=None):
        self.coordinate = coordinate
        self.context = dict(context or {})
        parts = [message]
        if coordinate is not None:
            parts.append(f"coordinate={coordinate}")
        parts.extend(f"{k}={v}" for k, v in self.context.items())
        super().__init__(", ".join(parts))


class FormatError(ValueError):
    """A data file does not follow the expected binary layout."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ConfigError(ValueError):
    """Config validation failed; ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
