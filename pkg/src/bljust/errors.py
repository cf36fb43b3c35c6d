"""Exception types shared across the package."""
from __future__ import annotations


class InvalidArgument(ValueError):
    pass


class InvalidState(RuntimeError):
    pass


class NumericError(ArithmeticError):
    """Non-finite value encountered during optimization.

    ``epoch``, ``phase`` and ``step`` locate the failure when known; drivers
    attach the partial trace as ``trace`` before re-raising.
    """

    def __init__(self, message, *, epoch=None, phase=None, step=None, coordinate=None):
        self.message = message
        self.epoch = epoch
        self.phase = phase
        self.step = step
        self.coordinate = coordinate
        self.trace = None
        super().__init__(self._render())

    def _render(self):
        where = []
        for name in ("epoch", "phase", "step", "coordinate"):
            value = getattr(self, name)
            if value is not None:
                where.append(f"{name}={value}")
        return self.message if not where else f"{self.message} ({', '.join(where)})"

    def with_context(self, **context):
        for key, value in context.items():
            if getattr(self, key) is None:
                setattr(self, key, value)
        self.args = (self._render(),)
        return self
