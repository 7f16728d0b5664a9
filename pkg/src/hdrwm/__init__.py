"""Saliency-guided QIM watermarking of HDR images in the lifting-wavelet domain."""

__version__ = "0.1.0"

# submodules read __version__, so it is bound before they are imported
from .errors import (  # noqa: E402
    CapacityError,
    ColorspaceError,
    ConfigError,
    DegenerateInputError,
    DimensionError,
    FormatError,
    ImageIOError,
    InvalidImageError,
    MetadataError,
    ToneMapOverflowError,
    WatermarkError,
)
from .imagecore import BitImage, HdrImage, SdrImage, load_image, save_image  # noqa: E402
from .keys import SecretKey  # noqa: E402
from .watermark import (  # noqa: E402
    EmbedParams,
    WatermarkMetadata,
    embed_watermark,
    extract_watermark,
    render_sdr,
)

__all__ = [
    "__version__", "BitImage", "HdrImage", "SdrImage", "load_image", "save_image",
    "SecretKey", "EmbedParams", "WatermarkMetadata", "embed_watermark", "extract_watermark",
    "render_sdr", "WatermarkError", "CapacityError", "ColorspaceError", "ConfigError",
    "DegenerateInputError", "DimensionError", "FormatError", "ImageIOError",
    "InvalidImageError", "MetadataError", "ToneMapOverflowError",
]
