"""Search throughput benchmark on a random synthetic index.

Before any timing, a sample of queries is checked against an in-module
brute-force scan (full float64 similarity sort, no blocking, no candidate
pruning); timing only starts once the fast path agrees exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .knn import Neighbor, top_k, top_k_batch
from .store import ReferenceIndex

ORACLE_SAMPLE = 10


@dataclass
class BenchResult:
    n: int
    dim: int
    queries: int
    k: int
    oracle_ok: bool
    queries_per_second: float
    latency_p50_ms: float
    latency_p90_ms: float
    latency_p99_ms: float


def brute_force_top_k(query, index: ReferenceIndex, k: int) -> list[Neighbor]:
    """Naive reference scan: float64 everything, full sort, id tie-break."""
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    q = q / np.linalg.norm(q)
    vectors = index.vectors.astype(np.float64)
    sims = [float(np.dot(row, q)) for row in vectors]
    order = sorted(range(len(sims)), key=lambda i: (-sims[i], i))[: min(k, len(sims))]
    return [
        Neighbor(id=i, label=index.records[i].label, similarity=min(1.0, max(-1.0, sims[i])))
        for i in order
    ]


def random_index(n: int, dim: int, seed: int = 0, labels: int = 16) -> ReferenceIndex:
    rng = np.random.default_rng(seed)
    index = ReferenceIndex()
    vectors = rng.standard_normal((n, dim))
    for i in range(n):
        index.add(vectors[i], label=f"class{i % labels:02d}")
    return index


def run_bench(
    n: int,
    dim: int,
    queries: int,
    k: int = 5,
    seed: int = 0,
    index: ReferenceIndex | None = None,
) -> BenchResult:
    """Benchmark top-k search over a random index (or a supplied one)."""
    if min(n, dim, queries, k) < 1:
        raise ValueError("n, d, q and k must all be >= 1")
    if index is None:
        index = random_index(n, dim, seed=seed)
    else:
        if index.dim != dim:
            raise ValueError(
                f"existing index has dim {index.dim}, flags requested dim {dim}"
            )
        n = len(index)
    rng = np.random.default_rng(seed + 1)
    batch = rng.standard_normal((queries, dim))

    sample = batch[: min(ORACLE_SAMPLE, queries)]
    fast = top_k_batch(sample, index, k)
    slow = [brute_force_top_k(q, index, k) for q in sample]
    oracle_ok = all(
        [n.id for n in f] == [n.id for n in s] for f, s in zip(fast, slow)
    )
    if not oracle_ok:
        return BenchResult(n, dim, queries, k, False, 0.0, 0.0, 0.0, 0.0)

    # Throughput: one timed pass over the whole batch (the blocked fast path).
    t0 = time.perf_counter()
    top_k_batch(batch, index, k)
    elapsed = time.perf_counter() - t0
    qps = queries / elapsed if elapsed > 0 else float("inf")

    # Latency: individually timed single queries (a sample, to stay cheap).
    lat_sample = batch[: min(200, queries)]
    lat_ms = []
    for q in lat_sample:
        t0 = time.perf_counter()
        top_k(q, index, k)
        lat_ms.append((time.perf_counter() - t0) * 1e3)
    p50, p90, p99 = np.percentile(lat_ms, [50, 90, 99])

    return BenchResult(
        n=n,
        dim=dim,
        queries=queries,
        k=k,
        oracle_ok=True,
        queries_per_second=qps,
        latency_p50_ms=float(p50),
        latency_p90_ms=float(p90),
        latency_p99_ms=float(p99),
    )
