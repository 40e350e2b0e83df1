class GIEError(Exception):
    """Base class for every error raised by this project."""


class GridDimensionError(GIEError, ValueError):
    pass


class RangeError(GIEError, ValueError):
    pass


class ScheduleError(GIEError, ValueError):
    pass


class ReconstructionError(GIEError, ValueError):
    """Raised when x0 cannot be recovered because alpha_t is zero."""


class ProviderError(GIEError):
    """An embedder, segmenter, unifier or prompt generator failed."""


class ProviderContractError(GIEError, ValueError):
    """A provider returned data that breaks its interface contract."""


class ManifestError(GIEError, ValueError):
    pass


class ProtocolError(GIEError, ValueError):
    """Evaluation split overlaps the data the model was trained on."""


class CheckpointError(GIEError, ValueError):
    pass


class NonFiniteLossError(GIEError, RuntimeError):
    def __init__(self, message: str, dump_path: str | None = None) -> None:
        super().__init__(message)
        self.dump_path = dump_path
