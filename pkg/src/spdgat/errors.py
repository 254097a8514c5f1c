"""Exception types shared across the package."""


class SpdgatError(Exception):
    """Base class for all package-specific errors."""


class NonFinite(SpdgatError):
    """Input contains NaN or infinite entries."""


class NonSquare(SpdgatError):
    """Matrix input is not square."""


class NotPositiveDefinite(SpdgatError):
    """Matrix failed the positive-definiteness check."""

    def __init__(self, min_eig: float, eps: float):
        self.min_eig = float(min_eig)
        self.eps = float(eps)
        super().__init__(f"minimum eigenvalue {self.min_eig:.6g} <= {self.eps:.6g}")


class DimensionMismatch(SpdgatError):
    """Operands (or files) do not agree on matrix dimension."""


class NoConvergence(SpdgatError):
    """Iterative solver failed to converge."""

    def __init__(self, max_iter: int, residual: float):
        self.max_iter = int(max_iter)
        self.residual = float(residual)
        super().__init__(f"no convergence after {max_iter} iterations (residual {residual:.3g})")


class SingularSystem(SpdgatError):
    """Unregularized least squares on a rank-deficient design."""


class ShapeMismatch(SpdgatError):
    """Tensor shapes are incompatible for the requested operation."""


class InvalidSegment(SpdgatError):
    """Segment ids are out of range or malformed."""


class NotScalar(SpdgatError):
    """backward() requires a scalar loss tensor."""


class DetachedTensor(SpdgatError):
    """Tensor is not attached to the active tape."""


class EmptyScope(SpdgatError):
    """Mask aggregation over an empty sample scope."""


class UnmappedRoi(SpdgatError):
    """A region index has no network assignment."""


class CoordDimensionMismatch(SpdgatError):
    """Coordinate table does not cover the mask dimension."""


class MissingFile(SpdgatError):
    """Referenced file does not exist."""


class ParseError(SpdgatError):
    """A delimited input file failed to parse."""

    def __init__(self, path, line: int, message: str):
        self.path = path
        self.line = int(line)
        super().__init__(f"{path}:{line}: {message}")


class EmptyDataset(SpdgatError):
    """Manifest resolved to zero samples."""


class AllMissingColumn(SpdgatError):
    """A matrix position is missing for every subject; imputation impossible."""

    def __init__(self, i: int, j: int):
        self.position = (int(i), int(j))
        super().__init__(f"position ({i}, {j}) is missing for all subjects")


class LengthMismatch(SpdgatError):
    """Aligned sequences have different lengths."""


class SingleClass(SpdgatError):
    """Metrics require at least two classes in the ground truth."""


class InvalidCounts(SpdgatError):
    """Synthetic-data class counts are malformed."""


class InvalidFolds(SpdgatError):
    """Cross-validation requires at least two folds."""


class EmptyClass(SpdgatError):
    """A training fold lost all samples of some class."""
