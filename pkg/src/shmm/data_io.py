"""Trace ingestion, segmentation, splits, candidate pools and evaluation.

Raw input is newline-delimited JSON, one record per line with fields
user_id, timestamp (ISO-8601 or epoch seconds), lon, lat, text; files
ending in .gz are decompressed transparently.  Preprocessed corpora are
NDJSON too, one trace per line with embeddings attached.

Candidate pools follow the next-location evaluation protocol: the true
final record of a test trace is mixed with negatives sampled among
records that are close to it both spatially (great-circle distance) and
in time of day (circular difference).
"""

from __future__ import annotations

import gzip
import json
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .hmm_core import ShmmModel, score_next
from .records import SECONDS_PER_DAY, SemanticRecord, Trace

EARTH_RADIUS_M = 6_371_000.0

DEFAULT_DELTA_T = 6 * 3600.0
DEFAULT_MIN_TRACE_LEN = 2
DEFAULT_POOL_SIZE = 10


def _open_text(path, mode="rt"):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode, encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def parse_timestamp(value) -> float:
    """Epoch seconds from an ISO-8601 string or a numeric epoch value."""
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip().replace("Z", "+00:00")
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def to_time_of_day(t_abs: float, utc_offset_s: float) -> float:
    return (t_abs + utc_offset_s) % SECONDS_PER_DAY


def read_raw_ndjson(path):
    """Yield raw record dicts from an NDJSON file (gzip by extension)."""
    with _open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON") from exc


# ---------------------------------------------------------------------------
# segmentation and splitting


@dataclass
class SegmentationResult:
    traces: list
    n_dropped_records: int


def segment_history(
    records: Sequence[SemanticRecord],
    delta_t: float = DEFAULT_DELTA_T,
    min_len: int = DEFAULT_MIN_TRACE_LEN,
) -> SegmentationResult:
    """Split a user's time-ordered records into dense traces.

    A new trace starts whenever the gap between consecutive records
    exceeds delta_t; traces shorter than min_len are discarded (their
    record count is reported so callers can account for every input
    record).
    """
    for a, b in zip(records, records[1:]):
        if b.t_abs < a.t_abs:
            raise ValueError("records must be sorted by t_abs")
    traces: list[Trace] = []
    dropped = 0
    segment: list[SemanticRecord] = []
    for rec in records:
        if segment and rec.t_abs - segment[-1].t_abs > delta_t:
            if len(segment) >= min_len:
                traces.append(Trace(segment))
            else:
                dropped += len(segment)
            segment = []
        segment.append(rec)
    if segment:
        if len(segment) >= min_len:
            traces.append(Trace(segment))
        else:
            dropped += len(segment)
    return SegmentationResult(traces=traces, n_dropped_records=dropped)


def split_corpus(traces: Sequence[Trace], train_frac: float, seed: int):
    """Deterministic trace-level shuffle split; train gets floor(frac * n)."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError(f"train_frac must be in (0, 1), got {train_frac!r}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(traces))
    n_train = int(math.floor(train_frac * len(traces)))
    train = [traces[i] for i in perm[:n_train]]
    test = [traces[i] for i in perm[n_train:]]
    return train, test


# ---------------------------------------------------------------------------
# candidate pools


def haversine_m(loc_a: np.ndarray, loc_b: np.ndarray) -> np.ndarray:
    """Great-circle distance in meters between (lon, lat) degree pairs."""
    loc_a = np.asarray(loc_a, dtype=float)
    loc_b = np.asarray(loc_b, dtype=float)
    lon1, lat1 = np.radians(loc_a[..., 0]), np.radians(loc_a[..., 1])
    lon2, lat2 = np.radians(loc_b[..., 0]), np.radians(loc_b[..., 1])
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = np.sin(dlat / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def circular_tday_diff(a, b) -> np.ndarray:
    """Time-of-day difference in seconds, wrapped to [0, 43200]."""
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % SECONDS_PER_DAY
    return np.minimum(d, SECONDS_PER_DAY - d)


@dataclass
class RecordIndex:
    """Flat record pool with stacked arrays for threshold queries."""

    records: list
    locs: np.ndarray
    t_days: np.ndarray

    @classmethod
    def build(cls, records: Sequence[SemanticRecord]) -> "RecordIndex":
        records = list(records)
        return cls(
            records=records,
            locs=np.array([r.loc for r in records], dtype=float),
            t_days=np.array([r.t_day for r in records], dtype=float),
        )

    @classmethod
    def from_traces(cls, traces: Sequence[Trace]) -> "RecordIndex":
        return cls.build([r for tr in traces for r in tr])


@dataclass
class CandidatePool:
    """The true next record mixed with spatio-temporally close negatives."""

    truth_index: int
    candidates: list
    insufficient: bool = False


def build_candidate_pool(
    test_trace: Trace,
    all_records: RecordIndex,
    dist_thresh: float,
    time_thresh: float,
    pool_size: int = DEFAULT_POOL_SIZE,
    seed: int = 0,
) -> CandidatePool:
    """Assemble a ranking pool for the final record of a test trace.

    Negatives are sampled uniformly (seeded) among records within
    dist_thresh meters great-circle distance of the truth and within
    time_thresh seconds circular time-of-day difference (both thresholds
    closed); the truth itself is excluded from the negatives and placed
    at a seeded random position.  When fewer than pool_size - 1 records
    qualify the pool is emitted smaller with insufficient=True.
    """
    if len(test_trace) < 2:
        raise ValueError("test trace must have at least 2 records")
    truth = test_trace[-1]
    dists = haversine_m(all_records.locs, truth.loc)
    tdiffs = circular_tday_diff(all_records.t_days, truth.t_day)
    qualify = (dists <= dist_thresh) & (tdiffs <= time_thresh)
    candidates_idx = [
        i for i in np.flatnonzero(qualify) if all_records.records[i] is not truth
    ]

    rng = np.random.default_rng(seed)
    n_negatives = pool_size - 1
    insufficient = len(candidates_idx) < n_negatives
    if not insufficient:
        chosen = rng.choice(len(candidates_idx), size=n_negatives, replace=False)
        negatives = [all_records.records[candidates_idx[i]] for i in chosen]
    else:
        negatives = [all_records.records[i] for i in candidates_idx]
    truth_pos = int(rng.integers(0, len(negatives) + 1))
    pool = negatives[:truth_pos] + [truth] + negatives[truth_pos:]
    return CandidatePool(truth_index=truth_pos, candidates=pool, insufficient=insufficient)


def build_pools(
    test: Sequence[Trace],
    all_records: RecordIndex,
    dist_thresh: float,
    time_thresh: float,
    pool_size: int = DEFAULT_POOL_SIZE,
    seed: int = 0,
) -> list[CandidatePool]:
    """One pool per test trace, with a per-trace derived seed (seed ^ index)."""
    return [
        build_candidate_pool(
            trace, all_records, dist_thresh, time_thresh, pool_size, seed=seed ^ i
        )
        for i, trace in enumerate(test)
    ]


def evaluate_prediction(
    model: ShmmModel,
    test: Sequence[Trace],
    pools: Sequence[CandidatePool],
    k_list: Sequence[int],
    score_fn=None,
) -> dict[int, float]:
    """accuracy@K of next-record ranking over aligned (trace, pool) pairs.

    score_fn defaults to hmm_core.score_next and exists so tests can
    substitute reference scorers.
    """
    if len(test) != len(pools):
        raise ValueError("pools must align one-to-one with test traces")
    if len(test) == 0:
        raise ValueError("nothing to evaluate")
    if score_fn is None:
        score_fn = score_next
    ranks = []
    for trace, pool in zip(test, pools):
        prefix = Trace(trace.records[:-1])
        ranked = score_fn(model, prefix, pool.candidates, len(pool.candidates))
        order = [idx for idx, _ in ranked]
        ranks.append(order.index(pool.truth_index))
    ranks = np.asarray(ranks)
    return {int(k): float(np.mean(ranks < k)) for k in k_list}


# ---------------------------------------------------------------------------
# corpus persistence


def write_corpus(traces: Sequence[Trace], path) -> None:
    """One trace per NDJSON line, embeddings attached."""
    with _open_text(path, "wt") as fh:
        for trace in traces:
            doc = {
                "user_id": trace[0].user_id,
                "records": [
                    {
                        "t_abs": r.t_abs,
                        "t_day": r.t_day,
                        "lon": float(r.loc[0]),
                        "lat": float(r.loc[1]),
                        "embedding": [float(x) for x in r.embedding],
                        "text": r.raw_text,
                    }
                    for r in trace
                ],
            }
            fh.write(json.dumps(doc) + "\n")


def read_corpus(path) -> list[Trace]:
    traces = []
    with _open_text(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            records = [
                SemanticRecord(
                    user_id=doc["user_id"],
                    t_abs=float(r["t_abs"]),
                    t_day=float(r["t_day"]),
                    loc=np.array([r["lon"], r["lat"]], dtype=float),
                    embedding=np.array(r["embedding"], dtype=float),
                    raw_text=r.get("text"),
                )
                for r in doc["records"]
            ]
            traces.append(Trace(records))
    return traces
