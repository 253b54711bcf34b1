from .bitstream import (
    BadMagicError,
    ChecksumError,
    CompressedStream,
    LengthError,
    StreamError,
    StreamHeader,
    VersionError,
    parse,
    serialize,
)
from .model import (
    SIGMA_MIN,
    EntropyModel,
    FactorizedPrior,
    compress_latent,
    decompress_latent,
    estimate_bits,
    gaussian_pmf,
    likelihood,
)
from .rangecoder import CoderError, quantize_pmf, range_decode, range_encode
