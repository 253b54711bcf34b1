"""Lossy image compression with a latent diffusion decoder and a learned timestep."""
from .codec import CodecContext, DecodeResult, EncodeResult, decode, encode
from .param_estimator import TRAINED_LAMBDAS, ParamEstimator
from .quantization import QuantParams, dequantize, quantize
from .schedule import NoiseSchedule, build_schedule

__version__ = "0.1.0"
