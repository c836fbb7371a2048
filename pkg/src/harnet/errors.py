"""Exception hierarchy.

Every error carries a short ``category`` slug; the CLI prints it on failure
so callers can grep for it.
"""


class HarNetError(Exception):
    category = "error"


class ShapeError(HarNetError, ValueError):
    category = "shape"


class ConfigError(HarNetError, ValueError):
    category = "config"


class LabelError(HarNetError, ValueError):
    category = "label"


class NumericError(HarNetError, ArithmeticError):
    category = "numeric"


class LengthError(HarNetError, ValueError):
    category = "length"


class IngestError(HarNetError, OSError):
    category = "ingest"


class AlignmentError(HarNetError, ValueError):
    category = "alignment"


class CorruptDataError(HarNetError, ValueError):
    category = "corrupt-data"


class DegenerateChannelError(HarNetError, ValueError):
    category = "degenerate-channel"


class ContractError(HarNetError, ValueError):
    category = "contract"


class FusionContractError(ContractError):
    category = "fusion-contract"


class CheckpointError(ContractError):
    category = "checkpoint"


class IntegrityError(HarNetError):
    category = "integrity"


class FetchError(HarNetError, OSError):
    """Network or source failure; safe to retry."""

    category = "fetch"
