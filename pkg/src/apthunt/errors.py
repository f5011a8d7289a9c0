"""Exception types shared by more than one pipeline stage."""


class DimMismatchError(ValueError):
    def __init__(self, expected: int, got: int, what: str = "vector"):
        super().__init__(f"{what} has dimension {got}, expected {expected}")
        self.expected = expected
        self.got = got


class AlignmentMismatchError(ValueError):
    def __init__(self, n_left: int, n_right: int, what: str = "events/vectors"):
        super().__init__(f"{what} misaligned: {n_left} vs {n_right}")
        self.n_left = n_left
        self.n_right = n_right


class NonFiniteError(ValueError):
    """Raised when an input or an intermediate value is NaN or infinite."""
