class FormatError(ValueError):
    """A file does not follow its documented on-disk layout."""


class GradientCheckError(AssertionError):
    """Analytic and numeric gradients disagree beyond tolerance."""


class DivergenceError(FloatingPointError):
    """An optimisation produced a non-finite loss."""

    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or f"non-finite loss at iteration {iteration}")
