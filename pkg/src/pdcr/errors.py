"""Exception types shared across the package."""


class PdcrError(Exception):
    """Base class for all package errors."""


class ShapeError(PdcrError, ValueError):
    """Raster dimensions or element counts do not line up."""


class BoundsError(PdcrError, ValueError):
    """An index or rectangle falls outside its host raster."""


class ConfigError(PdcrError, ValueError):
    """An experiment configuration violates its invariants."""


class BankBuildError(PdcrError, ValueError):
    """A perturbation bank could not be built from the given sources."""


class FormatError(PdcrError, ValueError):
    """A serialized artifact (bank file, map document) is malformed."""


class GatewayError(PdcrError, RuntimeError):
    """A remote model could not be reached or violated the wire protocol."""


class GatewayTimeout(GatewayError):
    """A model request did not complete within the configured timeout."""


class ModelError(PdcrError, RuntimeError):
    """A model evaluation failed; carries patch/trial context when raised
    from inside an explanation run."""
