"""Exception hierarchy shared by all modules.

DataError covers malformed or inconsistent inputs (exit code 2 in the CLI),
NumericalError covers solver and conditioning failures (exit code 3).
"""


class ShapematchError(Exception):
    """Base class for all package errors."""


class DataError(ShapematchError):
    """Malformed input: parse failures, validation failures, shape mismatches."""


class MeshError(DataError):
    """Mesh-specific validation failure (bad index, degenerate face, ...)."""


class NumericalError(ShapematchError):
    """Numerical failure: non-convergence, rank deficiency, barrier breach."""


class ConsistencyError(NumericalError):
    """Filter bank violates the energy consistency condition min G(lambda) >= eps.

    Carries the offending eigenvalue index and the energy value there.
    """

    def __init__(self, index: int, value: float, threshold: float):
        self.index = index
        self.value = value
        self.threshold = threshold
        super().__init__(
            f"filter bank energy G(lambda_{index}) = {value:.3e} "
            f"below threshold {threshold:.3e}; the closed-form refinement "
            f"needs sum_s h_s(lambda)^2 bounded away from zero"
        )
