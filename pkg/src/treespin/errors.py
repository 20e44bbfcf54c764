"""Exception hierarchy shared by every module."""


class TreeSpinError(Exception):
    """Base class for all errors raised by treespin."""


class InvalidParams(TreeSpinError, ValueError):
    pass


class NonErgodicKernel(TreeSpinError, ValueError):
    """Kernel graph is not strongly connected or is periodic."""


class NonNormalizable(TreeSpinError, ValueError):
    """A row of the potential exponent is +infinity everywhere."""


class NonReversibleKernel(TreeSpinError, ValueError):
    pass


class ModelFileError(TreeSpinError, ValueError):
    pass


class TooLarge(TreeSpinError):
    """An enumeration or search exceeded its state guard."""


class ZeroProbabilityBoundary(TreeSpinError, ValueError):
    pass


class DegenerateDenominator(TreeSpinError, ValueError):
    pass


class InconsistentBoundary(TreeSpinError, ValueError):
    pass


class NotColoringModel(TreeSpinError, ValueError):
    pass


class EmptyGoodSet(TreeSpinError):
    """No configuration of the component has every cut-level vertex free."""


class NotReversible(TreeSpinError, ValueError):
    pass


class NonErgodicChain(TreeSpinError):
    pass


class NegativeFunction(TreeSpinError, ValueError):
    pass


class PreconditionNotMet(TreeSpinError):
    pass
