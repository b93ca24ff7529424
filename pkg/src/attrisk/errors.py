"""Exception hierarchy shared across the package."""


class AttriskError(Exception):
    """Base class for all package errors."""


class SchemaError(AttriskError, ValueError):
    """A column is missing or a schema declaration is malformed."""


class ParseError(AttriskError, ValueError):
    """A cell could not be parsed into its column's kind."""


class DomainError(AttriskError, ValueError):
    """A value lies outside its declared domain."""


class PlanError(AttriskError, ValueError):
    """A synthesis plan is inconsistent with the data."""


class PlanOrderError(PlanError):
    """A predictor refers to a variable synthesized in a later step."""


class PlanTypeError(PlanError):
    """A step's family does not match the kind of its outcome."""


class FitError(AttriskError):
    """A synthesizer could not be fit."""


class SingularityError(FitError, ValueError):
    """The design matrix is rank deficient."""


class SizeError(AttriskError, ValueError):
    """Not enough posterior draws for the requested operation."""


class NumericalError(AttriskError, ArithmeticError):
    """A log density evaluated to NaN or normalization failed."""
