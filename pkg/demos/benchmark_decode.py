"""
Decode cost
===========

Times encoding and decoding on held-out crops and compares the adaptive
timestep against fixed step counts. Also reports how many parameters are
trained versus frozen.

    python demos/benchmark_decode.py [--checkpoint checkpoints/toy]
"""
import argparse
import json
from pathlib import Path

from ldcodec.codec import CodecContext
from ldcodec.data import heldout_crops
from ldcodec.evaluation import benchmark

ROOT = Path(__file__).resolve().parents[1]

parser = argparse.ArgumentParser()
parser.add_argument("--checkpoint", default=str(ROOT / "checkpoints" / "toy"))
parser.add_argument("--lam", type=float, default=10.0)
args = parser.parse_args()

ctx = CodecContext.load(args.checkpoint)
report = benchmark(ctx, heldout_crops(192, per_image=1), lam=args.lam, fixed_timesteps=(1, 10, 50))
print(json.dumps(report, indent=2))
