"""Elo ranking of methods from two-alternative forced-choice logs.

Ratings are order dependent, so the ranking is a Monte-Carlo estimate: each
iteration shuffles the tournament order, replays the games from equal
starting ratings and keeps the final ratings. Inside a tournament all
expected scores use the ratings from the tournament's start; the summed
updates are applied when it ends.

All iterations run together as rows of one array.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

K_FACTOR = 32.0
INITIAL_RATING = 1000.0
MODES = ("per_comparison", "per_participant")
LOG_COLUMNS = ("participant", "image", "method_a", "method_b", "winner")


@dataclass(frozen=True)
class Comparison:
    participant: str
    image: str
    method_a: str
    method_b: str
    winner: str  # "A" or "B"

    def __post_init__(self):
        if self.winner not in ("A", "B"):
            raise ValueError(f"winner must be 'A' or 'B', got {self.winner!r}")
        if self.method_a == self.method_b:
            raise ValueError("a comparison needs two different methods")


def read_log(path) -> list[Comparison]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(LOG_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"comparison log lacks columns {sorted(missing)}")
        return [Comparison(*(row[c].strip() for c in LOG_COLUMNS)) for row in reader]


def write_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r.participant, r.image, r.method_a, r.method_b, r.winner])


@dataclass
class EloResult:
    methods: list
    median: dict
    q1: dict
    q3: dict
    mode: str
    iterations: int
    seed: int
    k_factor: float
    initial_rating: float
    samples: np.ndarray = field(repr=False)  # (iterations, methods)

    def ranking(self) -> list:
        return sorted(self.methods, key=lambda m: -self.median[m])

    def rows(self) -> list[dict]:
        return [
            {"method": m, "median": self.median[m], "q1": self.q1[m], "q3": self.q3[m],
             "mode": self.mode, "iterations": self.iterations, "seed": self.seed,
             "k_factor": self.k_factor, "initial_rating": self.initial_rating}
            for m in self.ranking()
        ]

    def write_csv(self, path) -> None:
        rows = self.rows()
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


def _tournaments(log, mode, index):
    if mode == "per_comparison":
        groups = [[r] for r in log]
    else:
        by_user: dict = {}
        for r in log:
            by_user.setdefault(r.participant, []).append(r)
        groups = list(by_user.values())
    size = max(len(g) for g in groups)
    a = np.zeros((len(groups), size), dtype=np.int64)
    b = np.zeros_like(a)
    score = np.zeros((len(groups), size))
    mask = np.zeros((len(groups), size))
    for i, g in enumerate(groups):
        for j, r in enumerate(g):
            a[i, j] = index[r.method_a]
            b[i, j] = index[r.method_b]
            score[i, j] = 1.0 if r.winner == "A" else 0.0
            mask[i, j] = 1.0
    return a, b, score, mask


def elo_rank(log, mode: str = "per_comparison", iterations: int = 10_000, seed: int = 0,
             k_factor: float = K_FACTOR, initial_rating: float = INITIAL_RATING,
             methods=None) -> EloResult:
    """Median and quartiles of final Elo ratings over shuffled replays.

    ``methods`` optionally fixes the set of valid method names; any other name
    in the log is an error.
    """
    log = list(log)
    if not log:
        raise ValueError("empty comparison log")
    if mode not in MODES:
        raise ValueError(f"unknown tournament mode {mode!r}; expected one of {MODES}")
    seen = sorted({r.method_a for r in log} | {r.method_b for r in log})
    if methods is not None:
        unknown = set(seen) - set(methods)
        if unknown:
            raise ValueError(f"unknown methods in log: {sorted(unknown)}")
        names = list(methods)
    else:
        names = seen
    index = {m: i for i, m in enumerate(names)}
    ta, tb, ts, tm = _tournaments(log, mode, index)
    n_t, M = len(ta), len(names)

    rng = np.random.default_rng(seed)
    order = np.argsort(rng.random((iterations, n_t)), axis=1, kind="stable")
    ratings = np.full((iterations, M), float(initial_rating))
    rows = np.arange(iterations)[:, None]
    for k in range(n_t):
        tid = order[:, k]
        a, b, s, m = ta[tid], tb[tid], ts[tid], tm[tid]
        ra = np.take_along_axis(ratings, a, axis=1)
        rb = np.take_along_axis(ratings, b, axis=1)
        expected = 1.0 / (1.0 + 10.0 ** ((rb - ra) / 400.0))
        d = k_factor * (s - expected) * m
        flat = np.concatenate([(rows * M + a).ravel(), (rows * M + b).ravel()])
        delta = np.bincount(flat, weights=np.concatenate([d.ravel(), -d.ravel()]), minlength=iterations * M)
        ratings += delta.reshape(iterations, M)

    q1, med, q3 = np.percentile(ratings, [25, 50, 75], axis=0)
    return EloResult(
        methods=names,
        median={n: float(med[i]) for n, i in index.items()},
        q1={n: float(q1[i]) for n, i in index.items()},
        q3={n: float(q3[i]) for n, i in index.items()},
        mode=mode, iterations=iterations, seed=seed, k_factor=k_factor,
        initial_rating=initial_rating, samples=ratings,
    )


def synthetic_log(methods=("ours", "cdc", "illm", "hific"), strengths=(1.5, 0.8, 0.4, 0.0),
                  participants: int = 20, per_participant: int = 30, seed: int = 0) -> list[Comparison]:
    """Bradley-Terry simulated 2AFC log with latent method strengths."""
    rng = np.random.default_rng(seed)
    rows = []
    for p in range(participants):
        for k in range(per_participant):
            i, j = rng.choice(len(methods), size=2, replace=False)
            p_a = 1.0 / (1.0 + np.exp(strengths[j] - strengths[i]))
            winner = "A" if rng.random() < p_a else "B"
            rows.append(Comparison(f"p{p:02d}", f"img{k % 24:02d}", methods[i], methods[j], winner))
    return rows
