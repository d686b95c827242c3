"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when an argument violates an operation's precondition."""


class TrainingDiverged(RuntimeError):
    """Raised when a training step produces a non-finite loss."""

    def __init__(self, step: int, loss: float, grad_norm: float):
        super().__init__(
            f"non-finite loss at step {step}: loss={loss}, grad_norm={grad_norm}"
        )
        self.step = step
        self.loss = loss
        self.grad_norm = grad_norm
