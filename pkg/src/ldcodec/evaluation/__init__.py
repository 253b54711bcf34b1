from .benchmark import benchmark, parameter_counts
from .elo import Comparison, EloResult, elo_rank, read_log, synthetic_log, write_log
from .harness import (
    EvalRecord,
    aggregate,
    evaluate_codec,
    interpolate_front,
    naive_sweep,
    read_records,
    write_records,
)
from .metrics import ms_ssim, psnr, ssim
from .perceptual import RandomConvFeatures, fid_like, frechet_distance, lpips_like, perceptual_scores
