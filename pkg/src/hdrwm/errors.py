"""Exception types. The CLI maps each family to its own exit code."""


class WatermarkError(Exception):
    """Base class for all errors raised by hdrwm."""


class ImageIOError(WatermarkError, OSError):
    """File could not be read or written."""


class FormatError(WatermarkError, ValueError):
    """Malformed file, unsupported format, or wrong image type for a format."""


class InvalidImageError(WatermarkError, ValueError):
    """Raster violates its type invariants (shape, range, finiteness)."""


class ColorspaceError(WatermarkError, ValueError):
    pass


class DimensionError(WatermarkError, ValueError):
    pass


class DegenerateInputError(WatermarkError, ValueError):
    """Input on which the operation is undefined (e.g. zero variance, no light)."""


class ToneMapOverflowError(WatermarkError, ArithmeticError):
    pass


class CapacityError(WatermarkError):
    def __init__(self, needed, available, region=None):
        self.needed = int(needed)
        self.available = int(available)
        self.region = region
        where = f" in {region} region" if region else ""
        super().__init__(f"insufficient capacity{where}: need {self.needed} bits, "
                         f"{self.available} carriers available")


class MetadataError(WatermarkError, ValueError):
    """Sidecar metadata missing, inconsistent, or for a different operator/key."""


class ConfigError(WatermarkError, ValueError):
    pass
