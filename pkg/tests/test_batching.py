import collections

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pgen.batching import (DataLoader, Prefetcher, SequentialSampler, ShuffleSampler, StreamingDataLoader,
                           TokenBudgetSampler, sequential_plan, shard_stream, shuffle_plan, streaming_next_batch,
                           token_budget_plan)
from pgen.data import End, StreamingDataset, json_parser, text_parser
from pgen.errors import BadShard, ParseError, SampleTooLong
from pgen.pipeline import ProcessedSample


def test_sequential_plan():
    assert sequential_plan(5, 2) == [[0, 1], [2, 3], [4]]
    assert sequential_plan(0, 3) == []
    assert sequential_plan(2, 5) == [[0, 1]]


def test_shuffle_plan_determinism():
    assert shuffle_plan(50, 7, 3) == shuffle_plan(50, 7, 3)
    assert shuffle_plan(1000, 10, 1) != shuffle_plan(1000, 10, 2)


def test_token_budget_plan():
    assert token_budget_plan([3, 4, 5], 8) == [[0, 1], [2]]
    with pytest.raises(SampleTooLong):
        token_budget_plan([9], 8)
    plan = token_budget_plan([4] * 10, 12)
    assert [len(b) for b in plan] == [3, 3, 3, 1]


@settings(max_examples=80, deadline=None)
@given(st.lists(st.integers(1, 20), max_size=60), st.integers(20, 100), st.one_of(st.none(), st.integers(0, 99)))
def test_token_budget_partition_and_budget(lengths, budget, seed):
    plan = token_budget_plan(lengths, budget, seed)
    assert sorted(i for b in plan for i in b) == list(range(len(lengths)))
    assert all(b and len(b) * max(lengths[i] for i in b) <= budget for b in plan)


@given(st.integers(0, 200), st.integers(1, 30), st.integers(0, 5))
def test_plans_are_partitions(n, bs, seed):
    for plan in (sequential_plan(n, bs), shuffle_plan(n, bs, seed)):
        assert sorted(i for b in plan for i in b) == list(range(n))


def _samples(n):
    return [ProcessedSample([5 + i % 7] * (1 + i % 4)) for i in range(n)]


def _ids(batch):
    return batch.src_tokens[:, 0].tolist()


def test_loader_two_batches_then_end():
    loader = DataLoader(_samples(2), SequentialSampler(1))
    assert loader.next_batch() is not End
    assert loader.next_batch() is not End
    assert loader.next_batch() is End


def test_epochs_reshuffle_same_multiset():
    samples = [ProcessedSample([5 + i]) for i in range(20)]
    loader = DataLoader(samples, ShuffleSampler(4, seed=11))
    epoch0 = [_ids(b) for b in loader]
    loader.reset()
    epoch1 = [_ids(b) for b in loader]
    assert epoch0 != epoch1
    assert sorted(sum(epoch0, [])) == sorted(sum(epoch1, []))


def test_loader_state_round_trip():
    samples = [ProcessedSample([5 + i]) for i in range(12)]
    a = DataLoader(samples, ShuffleSampler(3, seed=1))
    a.next_batch()
    state = a.state()
    rest = [_ids(b) for b in a]
    b = DataLoader(samples, ShuffleSampler(3, seed=1))
    b.load_state(state)
    assert [_ids(x) for x in b] == rest


def _stream_file(tmp_path, n, lengths=None):
    rng = np.random.default_rng(0)
    lengths = lengths or rng.integers(1, 9, size=n).tolist()
    p = tmp_path / "s.txt"
    p.write_text("".join(f"{i} {lengths[i]}\n" for i in range(n)))
    return str(p), lengths


def _process(sample):
    i, n = map(int, sample["x"].split())
    return ProcessedSample([i + 5] * n)


def _stream_loader(path, sampler, C, seed=0, **kw):
    return StreamingDataLoader(StreamingDataset(path, text_parser("x")), sampler, _process, C, seed, **kw)


def test_buffer_of_one_keeps_stream_order(tmp_path):
    path, _ = _stream_file(tmp_path, 30)
    loader = _stream_loader(path, SequentialSampler(1), 1)
    order = []
    while (b := streaming_next_batch(loader)) is not End:
        order += [i - 5 for i in _ids(b)]
    assert order == list(range(30))


def test_streaming_batches_respect_budget_and_memory(tmp_path):
    path, lengths = _stream_file(tmp_path, 400)
    loader = _stream_loader(path, TokenBudgetSampler(16), 4)
    seen = []
    while (b := loader.next_batch()) is not End:
        assert b.size * b.src_tokens.shape[1] <= 16
        assert loader.resident <= 4 + b.size
        seen += [i - 5 for i in _ids(b)]
    assert sorted(seen) == list(range(400))


def test_streaming_determinism(tmp_path):
    path, _ = _stream_file(tmp_path, 200)
    runs = []
    for _ in range(2):
        loader = _stream_loader(path, TokenBudgetSampler(24), 16, seed=5)
        runs.append([_ids(b) for b in loader])
    assert runs[0] == runs[1]


def test_streaming_on_error(tmp_path):
    p = tmp_path / "j.jsonl"
    p.write_text('{"x":"0 2"}\nnot json\n{"x":"2 2"}\n')
    bad = StreamingDataLoader(StreamingDataset(str(p), json_parser), SequentialSampler(1), _process, 8)
    with pytest.raises(ParseError):
        list(bad)
    ok = StreamingDataLoader(StreamingDataset(str(p), json_parser), SequentialSampler(1), _process, 8,
                             on_error="skip")
    assert sorted(i - 5 for b in ok for i in _ids(b)) == [0, 2] and ok.skipped == 1


def test_shard_stream_round_robin(tmp_path):
    p = tmp_path / "s.txt"
    p.write_text("".join(f"s{i}\n" for i in range(6)))
    base = StreamingDataset(str(p), text_parser("x"))
    assert [s["x"] for s in shard_stream(base, 0, 2)] == ["s0", "s2", "s4"]
    assert [s["x"] for s in shard_stream(base, 1, 2)] == ["s1", "s3", "s5"]
    assert [s["x"] for s in shard_stream(base, 0, 1)] == [f"s{i}" for i in range(6)]
    with pytest.raises(BadShard):
        shard_stream(base, 2, 2)


def test_prefetcher_matches_direct(tmp_path):
    path, _ = _stream_file(tmp_path, 100)
    direct = [_ids(b) for b in _stream_loader(path, TokenBudgetSampler(20), 8, seed=3)]
    pf = Prefetcher(_stream_loader(path, TokenBudgetSampler(20), 8, seed=3))
    assert [_ids(b) for b in pf] == direct
    assert pf.next_batch() is End
    pf.reset()
    again = [_ids(b) for b in pf]
    assert collections.Counter(sum(again, [])) == collections.Counter(sum(direct, []))
