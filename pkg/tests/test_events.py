import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from appd.events import (
    TWO_PI, Event, MarkNormalization, Sequence, ValidationError, check_dataset, denormalize_marks,
    dumps_sequence, load_jsonl, normalize_marks, save_jsonl, validate,
)

from conftest import random_sequence


def test_normalize_endpoints_and_midpoint():
    norm = MarkNormalization((2.0, -1.0), (6.0, 1.0))
    seq = Sequence([Event(0.1, (2.0, -1.0)), Event(0.2, (6.0, 1.0)), Event(0.3, (4.0, 0.0))], 1.0)
    out = normalize_marks(seq, norm)
    assert out.events[0].mark == (0.0, 0.0)
    assert out.events[1].mark == pytest.approx((TWO_PI, TWO_PI))
    assert out.events[2].mark == pytest.approx((math.pi, math.pi))
    assert out.times.tolist() == seq.times.tolist()


def test_normalize_rejects_out_of_range_with_index():
    norm = MarkNormalization((0.0,), (1.0,))
    seq = Sequence([Event(0.1, (0.5,)), Event(0.2, (1.5,))], 1.0)
    with pytest.raises(ValidationError, match="event 1"):
        normalize_marks(seq, norm)


def test_normalization_needs_nonempty_ranges():
    with pytest.raises(ValueError):
        MarkNormalization((1.0,), (1.0,))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_normalize_roundtrip(seed, d):
    rng = np.random.default_rng(seed)
    lo = rng.uniform(-10, 10, d)
    hi = lo + rng.uniform(0.1, 20, d)
    n = int(rng.integers(0, 10))
    marks = lo + rng.uniform(0, 1, (n, d)) * (hi - lo)
    seq = Sequence.from_arrays(np.sort(rng.uniform(0, 1, n)), marks, 1.0)
    norm = MarkNormalization(tuple(lo), tuple(hi))
    fwd = normalize_marks(seq, norm)
    assert len(fwd) == len(seq) and np.array_equal(fwd.times, seq.times)
    assert not validate(fwd)
    back = denormalize_marks(fwd, norm)
    np.testing.assert_allclose(back.points(d), seq.points(d), rtol=0, atol=1e-12 * max(1.0, np.abs(hi).max()))


def test_validate_ok_and_violations():
    ok = Sequence.from_arrays([0.1, 0.5], [[1.0], [2.0]], 1.0)
    assert validate(ok) == []
    tie = Sequence.from_arrays([0.1, 0.1], horizon=1.0)
    assert "non-strict ordering at index 1" in validate(tie)
    late = Sequence.from_arrays([0.1, 1.0], horizon=1.0)
    assert any(p.startswith("event beyond horizon") for p in validate(late))
    bad_mark = Sequence.from_arrays([0.1], [[7.0]], 1.0)
    assert validate(bad_mark) and not validate(bad_mark, normalized=False)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_prefix_of_valid_sequence_is_valid(seed):
    rng = np.random.default_rng(seed)
    seq = random_sequence(rng, d=int(rng.integers(0, 3)))
    for i in range(len(seq) + 1):
        assert validate(seq.prefix(i)) == []


def test_empty_file_and_empty_sequence(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    assert load_jsonl(p) == []
    seq = Sequence((), 1.0)
    save_jsonl([seq], p)
    assert load_jsonl(p) == [seq]


def test_roundtrip_100_sequences_byte_stable(tmp_path):
    rng = np.random.default_rng(0)
    seqs = [random_sequence(rng, d=1, label=["anomalous", "normal", None][k % 3]) for k in range(100)]
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_jsonl(seqs, p1)
    loaded = load_jsonl(p1)
    assert loaded == seqs
    save_jsonl(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_malformed_line_reports_line_number(tmp_path):
    p = tmp_path / "bad.jsonl"
    good = dumps_sequence(Sequence.from_arrays([0.1], horizon=1.0))
    p.write_text(good + "\n{not json\n")
    with pytest.raises(ValidationError) as info:
        load_jsonl(p)
    assert info.value.line == 2


def test_non_monotone_times_rejected_on_load(tmp_path):
    p = tmp_path / "bad.jsonl"
    rec = {"horizon": 1.0, "events": [{"t": 0.5, "mark": []}, {"t": 0.2, "mark": []}]}
    p.write_text(json.dumps(rec) + "\n")
    with pytest.raises(ValidationError) as info:
        load_jsonl(p)
    assert "non-strict ordering at index 1" in info.value.violations


def test_dataset_must_share_mark_dimension():
    a = Sequence.from_arrays([0.1], [[1.0]], 1.0)
    b = Sequence.from_arrays([0.1], [[1.0, 2.0]], 1.0)
    assert any("disagree" in p for p in check_dataset([a, b]))
