"""
Ranking methods from pairwise preferences
=========================================

Builds a synthetic comparison log with known method strengths, then runs the
Monte Carlo Elo ranking in both tournament modes and draws the box plot.

    python demos/elo_ranking.py [--out build/elo.png]
"""
import argparse
from pathlib import Path

from ldcodec.evaluation import elo_rank, synthetic_log
from ldcodec.evaluation.plots import plot_elo

ROOT = Path(__file__).resolve().parents[1]

parser = argparse.ArgumentParser()
parser.add_argument("--out", default=str(ROOT / "build" / "elo.png"))
parser.add_argument("--iterations", type=int, default=10_000)
args = parser.parse_args()
Path(args.out).parent.mkdir(parents=True, exist_ok=True)

log = synthetic_log()
print(f"{len(log)} comparisons")

for mode in ("per_comparison", "per_participant"):
    res = elo_rank(log, mode, iterations=args.iterations)
    print(mode)
    for row in res.rows():
        print(f"  {row['method']:>6}: median {row['median']:.1f} (IQR {row['q1']:.1f} to {row['q3']:.1f})")

plot_elo(res, args.out)
print("wrote", args.out)
