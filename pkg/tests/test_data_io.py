"""Tests for segmentation, splitting, candidate pools and evaluation."""

import numpy as np
import pytest

from shmm.data_io import (
    RecordIndex,
    build_candidate_pool,
    build_pools,
    circular_tday_diff,
    evaluate_prediction,
    haversine_m,
    parse_timestamp,
    read_corpus,
    segment_history,
    split_corpus,
    to_time_of_day,
    write_corpus,
)
from shmm.records import SemanticRecord, Trace


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def make_record(t_abs, t_day=None, loc=(0.0, 0.0), user="u", p=3):
    return SemanticRecord(
        user_id=user,
        t_abs=float(t_abs),
        t_day=float(t_abs % 86400 if t_day is None else t_day),
        loc=np.asarray(loc, dtype=float),
        embedding=unit(np.arange(1, p + 1)),
    )


HOUR = 3600.0


class TestSegmentHistory:
    def test_single_split_at_large_gap(self):
        # gaps 1h, 7h, 2h -> two traces of length 2
        records = [make_record(t) for t in np.cumsum([0, 1, 7, 2]) * HOUR]
        result = segment_history(records)
        assert [len(t) for t in result.traces] == [2, 2]
        assert result.n_dropped_records == 0

    def test_no_split_when_gaps_small(self):
        records = [make_record(t * HOUR) for t in range(8)]
        result = segment_history(records)
        assert [len(t) for t in result.traces] == [8]

    def test_short_segments_are_dropped_and_counted(self):
        records = [make_record(t) for t in [0.0, 10 * HOUR, 11 * HOUR, 30 * HOUR]]
        result = segment_history(records)
        assert [len(t) for t in result.traces] == [2]
        assert result.n_dropped_records == 2

    def test_planted_gaps_match_scan_oracle(self):
        rng = np.random.default_rng(0)
        gaps = rng.uniform(0.5, 12.0, size=999) * HOUR
        t_abs = np.concatenate([[0.0], np.cumsum(gaps)])
        records = [make_record(t) for t in t_abs]
        result = segment_history(records, delta_t=6 * HOUR, min_len=1)
        # oracle: boundaries exactly where the gap exceeds the threshold
        boundaries = np.flatnonzero(gaps > 6 * HOUR)
        expected_lengths = np.diff(np.concatenate([[0], boundaries + 1, [len(records)]]))
        assert [len(t) for t in result.traces] == list(expected_lengths)

    def test_conservation_invariant(self):
        rng = np.random.default_rng(1)
        for seed in range(10):
            gaps = rng.uniform(0.5, 14.0, size=200) * HOUR
            records = [make_record(t) for t in np.concatenate([[0.0], np.cumsum(gaps)])]
            result = segment_history(records, min_len=3)
            assert (
                sum(len(t) for t in result.traces) + result.n_dropped_records == len(records)
            )

    def test_unsorted_input_rejected(self):
        records = [make_record(100.0), make_record(0.0)]
        with pytest.raises(ValueError):
            segment_history(records)


class TestSplitCorpus:
    def _traces(self, n):
        return [Trace([make_record(0.0, user=f"u{i}"), make_record(10.0, user=f"u{i}")]) for i in range(n)]

    def test_seventy_thirty(self):
        train, test = split_corpus(self._traces(10), 0.7, seed=0)
        assert len(train) == 7 and len(test) == 3

    def test_same_seed_identical(self):
        traces = self._traces(20)
        a_train, a_test = split_corpus(traces, 0.7, seed=5)
        b_train, b_test = split_corpus(traces, 0.7, seed=5)
        assert [t[0].user_id for t in a_train] == [t[0].user_id for t in b_train]
        assert [t[0].user_id for t in a_test] == [t[0].user_id for t in b_test]

    def test_floor_rounding(self):
        train, test = split_corpus(self._traces(101), 0.5, seed=1)
        assert len(train) == 50 and len(test) == 51

    def test_partition_is_disjoint_and_exhaustive(self):
        traces = self._traces(30)
        train, test = split_corpus(traces, 0.4, seed=2)
        ids = sorted(t[0].user_id for t in train) + sorted(t[0].user_id for t in test)
        assert sorted(ids) == sorted(t[0].user_id for t in traces)

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            split_corpus(self._traces(5), 1.0, seed=0)


class TestHaversine:
    def test_known_distance(self):
        # one degree of latitude is ~111.19 km on the sphere
        d = haversine_m(np.array([0.0, 0.0]), np.array([0.0, 1.0]))
        assert d == pytest.approx(111_195.0, rel=1e-3)

    def test_zero_distance(self):
        assert haversine_m(np.array([10.0, 45.0]), np.array([10.0, 45.0])) == 0.0

    def test_circular_time_diff(self):
        assert circular_tday_diff(100.0, 86300.0) == pytest.approx(200.0)
        assert circular_tday_diff(0.0, 43200.0) == pytest.approx(43200.0)
        assert circular_tday_diff(10.0, 10.0) == 0.0


class TestCandidatePool:
    def _trace(self):
        return Trace([make_record(0.0, t_day=1000.0), make_record(HOUR, t_day=5000.0)])

    def test_only_truth_qualifies(self):
        trace = self._trace()
        # far-away records: nothing qualifies
        others = [make_record(50.0, t_day=30000.0, loc=(50.0, 50.0)) for _ in range(5)]
        index = RecordIndex.build(others + [trace[-1]])
        pool = build_candidate_pool(trace, index, 3500.0, 300.0, pool_size=10, seed=0)
        assert pool.insufficient
        assert len(pool.candidates) == 1
        assert pool.candidates[pool.truth_index] is trace[-1]

    def test_threshold_boundaries_are_closed(self):
        trace = self._trace()
        truth = trace[-1]
        at_boundary = make_record(10.0, t_day=truth.t_day, loc=(0.03, 0.0))
        boundary_dist = float(haversine_m(np.array([0.03, 0.0]), truth.loc))
        beyond = make_record(11.0, t_day=truth.t_day, loc=(0.0301, 0.0))
        at_time_edge = make_record(12.0, t_day=truth.t_day + 300.0, loc=truth.loc)
        past_time_edge = make_record(13.0, t_day=truth.t_day + 300.5, loc=truth.loc)
        index = RecordIndex.build([at_boundary, beyond, at_time_edge, past_time_edge, truth])
        pool = build_candidate_pool(
            trace, index, dist_thresh=boundary_dist, time_thresh=300.0, pool_size=10, seed=3
        )
        members = {id(c) for c in pool.candidates}
        assert id(at_boundary) in members
        assert id(at_time_edge) in members
        assert id(beyond) not in members
        assert id(past_time_edge) not in members
        assert pool.insufficient  # only 2 negatives qualified

    def test_same_seed_identical_pools(self):
        rng = np.random.default_rng(7)
        trace = self._trace()
        others = [
            make_record(float(i), t_day=trace[-1].t_day + rng.uniform(-200, 200),
                        loc=rng.normal(0.0, 0.005, size=2))
            for i in range(40)
        ]
        index = RecordIndex.build(others + [trace[-1]])
        a = build_candidate_pool(trace, index, 3500.0, 300.0, seed=9)
        b = build_candidate_pool(trace, index, 3500.0, 300.0, seed=9)
        assert a.truth_index == b.truth_index
        assert [id(c) for c in a.candidates] == [id(c) for c in b.candidates]
        assert len(a.candidates) == 10

    def test_negatives_never_violate_thresholds(self):
        rng = np.random.default_rng(11)
        trace = self._trace()
        truth = trace[-1]
        others = [
            make_record(float(i), t_day=rng.uniform(0, 86400),
                        loc=rng.normal(0.0, 0.05, size=2))
            for i in range(500)
        ]
        index = RecordIndex.build(others + [truth])
        pool = build_candidate_pool(trace, index, 2000.0, 300.0, seed=13)
        for cand in pool.candidates:
            assert float(haversine_m(cand.loc, truth.loc)) <= 2000.0
            assert float(circular_tday_diff(cand.t_day, truth.t_day)) <= 300.0

    def test_truth_appears_exactly_once(self):
        trace = self._trace()
        truth = trace[-1]
        others = [make_record(float(i), t_day=truth.t_day, loc=(0.001 * i, 0.0)) for i in range(20)]
        index = RecordIndex.build(others + [truth])
        pool = build_candidate_pool(trace, index, 3500.0, 300.0, seed=17)
        assert sum(1 for c in pool.candidates if c is truth) == 1
        assert pool.candidates[pool.truth_index] is truth


class TestEvaluatePrediction:
    def _setup(self, n_pools, pool_size=10, seed=0):
        rng = np.random.default_rng(seed)
        tests, pools = [], []
        for i in range(n_pools):
            tests.append(Trace([make_record(0.0), make_record(10.0)]))
            cands = [make_record(100.0 + j) for j in range(pool_size)]
            from shmm.data_io import CandidatePool

            pools.append(
                CandidatePool(truth_index=int(rng.integers(pool_size)), candidates=cands)
            )
        return tests, pools

    def test_k_equal_pool_size_is_always_one(self):
        tests, pools = self._setup(50)
        rng = np.random.default_rng(1)

        def stub(model, prefix, candidates, k_top):
            scores = rng.standard_normal(len(candidates))
            order = np.argsort(-scores, kind="stable")
            return [(int(i), float(scores[i])) for i in order[:k_top]]

        acc = evaluate_prediction(None, tests, pools, [10], score_fn=stub)
        assert acc[10] == 1.0

    def test_null_scorer_hits_chance_rate(self):
        tests, pools = self._setup(10_000, seed=2)
        rng = np.random.default_rng(3)

        def stub(model, prefix, candidates, k_top):
            scores = rng.standard_normal(len(candidates))
            order = np.argsort(-scores, kind="stable")
            return [(int(i), float(scores[i])) for i in order[:k_top]]

        acc = evaluate_prediction(None, tests, pools, [1], score_fn=stub)
        assert acc[1] == pytest.approx(0.1, abs=0.02)

    def test_alignment_enforced(self):
        tests, pools = self._setup(4)
        with pytest.raises(ValueError):
            evaluate_prediction(None, tests, pools[:-1], [1])


class TestTimestampsAndPersistence:
    def test_parse_epoch_and_iso(self):
        assert parse_timestamp(1_400_000_000) == 1_400_000_000.0
        assert parse_timestamp("2014-08-01T00:00:00Z") == pytest.approx(1406851200.0)
        assert parse_timestamp("2014-08-01T00:00:00+00:00") == pytest.approx(1406851200.0)

    def test_time_of_day_with_offset(self):
        # UTC-7: 2014-08-01T00:00:00Z is 17:00 local the previous day
        t = to_time_of_day(1406851200.0, -7 * 3600.0)
        assert t == pytest.approx(17 * 3600.0)

    def test_corpus_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        traces = []
        for i in range(3):
            records = [
                SemanticRecord(
                    user_id=f"user{i}",
                    t_abs=float(j) * 1000.0,
                    t_day=float(rng.uniform(0, 86400)),
                    loc=rng.standard_normal(2),
                    embedding=unit(rng.standard_normal(5)),
                    raw_text=f"message {j}",
                )
                for j in range(4)
            ]
            traces.append(Trace(records))
        path = tmp_path / "corpus.ndjson"
        write_corpus(traces, path)
        loaded = read_corpus(path)
        assert len(loaded) == 3
        for a, b in zip(loaded, traces):
            assert a[0].user_id == b[0].user_id
            np.testing.assert_array_equal(a.embeddings, b.embeddings)
            np.testing.assert_array_equal(a.locs, b.locs)
            assert [r.raw_text for r in a] == [r.raw_text for r in b]

    def test_corpus_round_trip_gzip(self, tmp_path):
        traces = [Trace([make_record(0.0), make_record(50.0)])]
        path = tmp_path / "corpus.ndjson.gz"
        write_corpus(traces, path)
        loaded = read_corpus(path)
        assert len(loaded[0]) == 2

    def test_pools_per_trace_seeds(self):
        rng = np.random.default_rng(5)
        tests = []
        for i in range(4):
            tests.append(
                Trace([make_record(0.0, t_day=1000.0), make_record(10.0, t_day=1100.0)])
            )
        others = [
            make_record(float(i), t_day=1100.0 + rng.uniform(-300, 300),
                        loc=rng.normal(0.0, 0.002, size=2))
            for i in range(200)
        ]
        index = RecordIndex.build(others)
        pools_a = build_pools(tests, index, 3500.0, 300.0, seed=7)
        pools_b = build_pools(tests, index, 3500.0, 300.0, seed=7)
        for a, b in zip(pools_a, pools_b):
            assert a.truth_index == b.truth_index
            assert [id(c) for c in a.candidates] == [id(c) for c in b.candidates]
