from __future__ import annotations


class TrajcertError(Exception):
    pass


class InvalidInputError(TrajcertError, ValueError):
    pass


class NumericalError(TrajcertError, ArithmeticError):
    def __init__(self, msg: str, jitter: float | None = None):
        super().__init__(msg if jitter is None else f"{msg} (final jitter={jitter:.3e})")
        self.jitter = jitter


class InvariantViolation(TrajcertError, AssertionError):
    def __init__(self, msg: str, step: int | None = None):
        super().__init__(msg if step is None else f"{msg} at step {step}")
        self.step = step
