"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """An argument violates an operation's precondition."""


class SessionAbort(RuntimeError):
    """A feedback session was aborted because an encoder misbehaved."""

    def __init__(self, sender, t, message="encoder emitted a non-finite symbol"):
        self.sender = sender
        self.t = t
        super().__init__(f"{message} (sender={sender}, t={t})")


class CalibrationFailure(RuntimeError):
    """Inner-code calibration hit its budget before meeting the target."""

    def __init__(self, message, best_epsilon, best_reps=None):
        self.best_epsilon = best_epsilon
        self.best_reps = best_reps
        super().__init__(f"{message} (best epsilon={best_epsilon!r}, reps={best_reps!r})")


class PowerViolation(RuntimeError):
    """An emitted codeword broke the configured power constraint."""
