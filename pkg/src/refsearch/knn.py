"""Exact top-k cosine search over the reference index, plus majority vote.

Search strategy: stored vectors are unit float32, so similarity is a dot
product. Scores for a block of queries come from one float32 matrix product
(the fast path), then every record whose float32 score could plausibly reach
the top-k cut (a conservative slack around the k-th score) is re-scored in
float64 and the final ranking is decided on those exact values. The result is
equal to a float64 brute-force scan at float32-gemm speed.

Ties: equal similarity at the cut is broken by ascending record id. Vote ties
prefer the tied class with the single most similar neighbor, then the higher
summed similarity within the top-k, then the lexicographically smallest label.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .store import ReferenceIndex, ZERO_NORM_EPS

QUERY_BLOCK = 512
ARGMAX_PASS_MAX_K = 16


@dataclass(frozen=True)
class Neighbor:
    id: int
    label: str
    similarity: float


@dataclass(frozen=True)
class ClassifierConfig:
    k: int = 5

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


@dataclass
class Prediction:
    label: str
    votes: dict[str, int]
    neighbors: list[Neighbor]
    margin: float
    effective_k: int


class BatchClassifyError(ValueError):
    """Some queries in a batch failed; carries per-query diagnostics.

    failures: list of (query index, message); predictions: per-query results
    with None at the failed positions.
    """

    def __init__(self, failures, predictions):
        self.failures = failures
        self.predictions = predictions
        detail = "; ".join(f"[{i}] {msg}" for i, msg in failures[:5])
        super().__init__(f"{len(failures)} of {len(predictions)} queries failed: {detail}")


def cosine_similarity(a, b) -> float:
    """(a . b) / (|a| |b|) in float64, clamped to [-1, 1]."""
    av = np.asarray(a, dtype=np.float64).reshape(-1)
    bv = np.asarray(b, dtype=np.float64).reshape(-1)
    if av.size != bv.size:
        raise ValueError(f"dimension mismatch: {av.size} vs {bv.size}")
    na = np.linalg.norm(av)
    nb = np.linalg.norm(bv)
    if na < ZERO_NORM_EPS or nb < ZERO_NORM_EPS:
        raise ValueError("cosine similarity of a zero vector is undefined")
    return float(np.clip(np.dot(av, bv) / (na * nb), -1.0, 1.0))


def _normalized_query(query, dim: int) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.size != dim:
        raise ValueError(f"query dim {q.size} does not match index dim {dim}")
    if not np.isfinite(q).all():
        raise ValueError("query has non-finite components")
    norm = float(np.linalg.norm(q))
    if norm < ZERO_NORM_EPS:
        raise ValueError("query vector has (near-)zero norm")
    return q / norm


def _score_slack(dim: int) -> float:
    # Bound on |float32 score - float64 score| for unit vectors, with margin.
    return max(1e-3, 4.0e-7 * dim)


def _refined_topk(index: ReferenceIndex, block_q64: np.ndarray, cand_lists, k: int):
    """Re-score every candidate in float64 and rank exactly.

    One einsum with optimize=False: each (record, query) product is reduced
    independently, so a pair's similarity is bit-identical no matter which
    batch or candidate set it appears in.
    """
    counts = [len(c) for c in cand_lists]
    flat_ids = np.concatenate(cand_lists)
    gathered = index.vectors64[flat_ids]
    if len(flat_ids) * block_q64.shape[1] <= 16_000_000:
        queries = np.repeat(block_q64, counts, axis=0)
        sims = np.einsum("fd,fd->f", gathered, queries, optimize=False)
    else:
        # Tie-heavy data (many near-duplicates) can make candidate lists huge;
        # refine row by row to bound memory. Same einsum primitive, so every
        # (record, query) similarity keeps the exact same bits.
        sims = np.empty(len(flat_ids))
        pos = 0
        for row, count in enumerate(counts):
            rows = gathered[pos : pos + count]
            qrep = np.repeat(block_q64[row : row + 1], count, axis=0)
            sims[pos : pos + count] = np.einsum("fd,fd->f", rows, qrep, optimize=False)
            pos += count

    results = []
    pos = 0
    for count in counts:
        ids = flat_ids[pos : pos + count]
        s = sims[pos : pos + count]
        pos += count
        order = sorted(range(count), key=lambda j: (-s[j], ids[j]))[:k]
        results.append(
            [
                Neighbor(
                    id=int(ids[j]),
                    label=index.records[int(ids[j])].label,
                    similarity=min(1.0, max(-1.0, float(s[j]))),
                )
                for j in order
            ]
        )
    return results


def _block_candidates(scores: np.ndarray, k: int, slack: float):
    """Per-row candidate id arrays covering the exact top-k.

    scores is float32 (rows, n) and is consumed (mutated) by the small-k
    argmax passes.
    """
    rows, n = scores.shape
    if k >= n:
        full = np.arange(n)
        return [full] * rows

    if k <= ARGMAX_PASS_MAX_K:
        row_ids = np.arange(rows)
        top_ids = np.empty((rows, k), dtype=np.int64)
        kth = None
        for j in range(k):
            idx = np.argmax(scores, axis=1)
            top_ids[:, j] = idx
            kth = scores[row_ids, idx]
            scores[row_ids, idx] = -np.inf
        # Rows whose remaining max is clearly below the cut need no rescan.
        rest_max = scores.max(axis=1)
        needs_scan = rest_max >= kth - slack
        out = []
        for r in range(rows):
            if not needs_scan[r]:
                out.append(top_ids[r])
                continue
            extra = np.flatnonzero(scores[r] >= kth[r] - slack)
            out.append(np.concatenate([top_ids[r], extra]) if extra.size else top_ids[r])
        return out

    cut = np.partition(scores, n - k, axis=1)[:, n - k]
    return [np.flatnonzero(scores[r] >= cut[r] - slack) for r in range(rows)]


def _normalized_batch(queries, dim: int) -> np.ndarray:
    try:
        arr = np.asarray(list(queries), dtype=np.float64)
    except ValueError:
        arr = None
    if arr is None or arr.ndim != 2:
        # Ragged or malformed input: reuse the single-query path so the
        # error message pinpoints the problem.
        for q in queries:
            _normalized_query(q, dim)
        raise ValueError("queries must form a uniform 2-D batch")
    if arr.shape[1] != dim:
        raise ValueError(f"query dim {arr.shape[1]} does not match index dim {dim}")
    finite_rows = np.isfinite(arr).all(axis=1)
    if not finite_rows.all():
        bad = int(np.flatnonzero(~finite_rows)[0])
        raise ValueError(f"query has non-finite components (batch index {bad})")
    norms = np.sqrt((arr * arr).sum(axis=1))
    if (norms < ZERO_NORM_EPS).any():
        bad = int(np.flatnonzero(norms < ZERO_NORM_EPS)[0])
        raise ValueError(f"query vector has (near-)zero norm (batch index {bad})")
    return arr / norms[:, None]


def top_k_batch(queries, index: ReferenceIndex, k: int) -> list[list[Neighbor]]:
    """Exact descending-similarity top-k per query (ids tie-break ascending)."""
    if len(index) == 0:
        raise ValueError("cannot search an empty index")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    queries = list(queries)
    if not queries:
        return []
    q64 = _normalized_batch(queries, index.dim)
    q32 = q64.astype(np.float32)
    vectors = index.vectors
    slack = _score_slack(index.dim)
    k_eff = min(k, len(index))

    results: list[list[Neighbor]] = []
    for start in range(0, len(q64), QUERY_BLOCK):
        scores = q32[start : start + QUERY_BLOCK] @ vectors.T  # float32 scratch
        cand_lists = _block_candidates(scores, k_eff, slack)
        results.extend(_refined_topk(index, q64[start : start + QUERY_BLOCK], cand_lists, k_eff))
    return results


def top_k(query, index: ReferenceIndex, k: int) -> list[Neighbor]:
    """Single-query exact top-k (same path as the batch form)."""
    return top_k_batch([query], index, k)[0]


def prediction_from_neighbors(neighbors: list[Neighbor]) -> Prediction:
    """Apply the majority vote (and its tie rules) to a ranked neighbor list."""
    votes: dict[str, int] = {}
    best: dict[str, float] = {}
    summed: dict[str, float] = {}
    for nb in neighbors:
        votes[nb.label] = votes.get(nb.label, 0) + 1
        best[nb.label] = max(best.get(nb.label, -np.inf), nb.similarity)
        summed[nb.label] = summed.get(nb.label, 0.0) + nb.similarity
    max_votes = max(votes.values())
    tied = [label for label, v in votes.items() if v == max_votes]
    winner = min(tied, key=lambda label: (-best[label], -summed[label], label))
    margin = neighbors[0].similarity - neighbors[1].similarity if len(neighbors) >= 2 else 0.0
    return Prediction(
        label=winner,
        votes=votes,
        neighbors=neighbors,
        margin=margin,
        effective_k=len(neighbors),
    )


def classify(query, index: ReferenceIndex, config: ClassifierConfig = ClassifierConfig()) -> Prediction:
    """Majority vote over the top-k most similar references."""
    return prediction_from_neighbors(top_k(query, index, config.k))


def batch_classify(
    queries,
    index: ReferenceIndex,
    config: ClassifierConfig = ClassifierConfig(),
    workers: int | None = None,
) -> list[Prediction]:
    """Elementwise classify, order preserved; failures collected per index.

    Raises BatchClassifyError after processing everything if any query was
    invalid (zero norm, wrong dim, non-finite).
    """
    queries = list(queries)
    if not queries:
        return []
    if len(index) == 0:
        raise ValueError("cannot search an empty index")

    valid: list[np.ndarray] = []
    slots: list[int | None] = []
    failures: list[tuple[int, str]] = []
    for i, q in enumerate(queries):
        try:
            _normalized_query(q, index.dim)  # validation only; search gets the raw query
            valid.append(q)
            slots.append(len(valid) - 1)
        except ValueError as exc:
            failures.append((i, str(exc)))
            slots.append(None)

    def run(block: list[np.ndarray]) -> list[Prediction]:
        return [prediction_from_neighbors(nbs) for nbs in top_k_batch(block, index, config.k)]

    if valid:
        if workers and workers > 1:
            chunk = max(1, (len(valid) + workers - 1) // workers)
            blocks = [valid[i : i + chunk] for i in range(0, len(valid), chunk)]
            with ThreadPoolExecutor(max_workers=workers) as pool:
                chunks = list(pool.map(run, blocks))
            flat = [p for ch in chunks for p in ch]
        else:
            flat = run(valid)
    else:
        flat = []

    predictions = [flat[slot] if slot is not None else None for slot in slots]
    if failures:
        raise BatchClassifyError(failures, predictions)
    return predictions
