from __future__ import annotations

import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvqa.datagen import (
    TASK_NAMES,
    StreamConfig,
    dumps_stream,
    export_stream,
    generate_stream,
    ingest_features,
    loads_stream,
)
from cvqa.errors import ConfigInvalid, ParseError, ShapeMismatch

SMALL = StreamConfig(num_tasks=3, d=6, n=4, L=2, vocab=5, visual_clusters=3, query_clusters=3,
                     train_per_task=20, test_per_task=8, novel_per_task=6, distractor_regions=1, center_rank=3)

HAND_WRITTEN = """\
{"version": 1, "d": 2, "n": 1, "L": 1, "T": 1, "vocab": 3}
{"task": 0, "split": "train", "regions": [[0.5, -1.25]], "query": [[2.0, 0.0]], "answer": [2], "pair": [1, 0]}
{"task": 1, "split": "novel", "regions": [[1e-3, 3.0]], "query": [[-0.5, 0.75]], "answer": [1], "pair": [0, 1]}
"""


def test_same_seed_gives_byte_identical_streams():
    assert dumps_stream(generate_stream(SMALL, 4)) == dumps_stream(generate_stream(SMALL, 4))
    assert dumps_stream(generate_stream(SMALL, 4)) != dumps_stream(generate_stream(SMALL, 5))


def test_zero_noise_regions_equal_centres():
    cfg = dataclasses.replace(SMALL, region_noise=0.0, query_noise=0.0)
    for task in generate_stream(cfg, 0).tasks:
        for s in task.train + task.test + task.novel:
            v, q = s.pair
            assert (s.regions == task.visual_centers[v]).all()
            assert (s.query == task.query_centers[q]).all()


def test_two_by_two_with_one_held_out_pair_exhaustive():
    cfg = StreamConfig(num_tasks=2, d=4, n=2, L=1, vocab=4, visual_clusters=2, query_clusters=2, held_out=1,
                       train_per_task=40, test_per_task=10, novel_per_task=10, distractor_regions=0,
                       center_rank=2)
    for task in generate_stream(cfg, 1).tasks:
        assert len(task.held_out) == 1
        (held,) = task.held_out
        assert {s.pair for s in task.novel} == {held}
        assert all(s.pair != held for s in task.train + task.test)
        assert {s.pair for s in task.train} == {(0, 0), (0, 1), (1, 0), (1, 1)} - {held}


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 3), st.integers(0, 1000))
def test_train_and_novel_pairs_are_disjoint(nv, nq, held, seed):
    held = min(held, nv * nq - 1)
    cfg = dataclasses.replace(SMALL, num_tasks=2, visual_clusters=nv, query_clusters=nq, held_out=held,
                              novel_per_task=5)
    for task in generate_stream(cfg, seed).tasks:
        train_pairs = {s.pair for s in task.train}
        assert train_pairs.isdisjoint({s.pair for s in task.novel})
        assert {s.pair for s in task.novel} <= task.held_out
        for s in task.train + task.test + task.novel:
            assert 1 <= s.answer[0] < cfg.vocab
            assert s.regions.shape == (cfg.n, cfg.d) and s.query.shape == (cfg.L, cfg.d)
            assert s.answer[0] == task.answer_table[s.pair]


def test_linear_classifier_solves_noiseless_tasks():
    cfg = dataclasses.replace(StreamConfig(), num_tasks=4)
    for task in generate_stream(cfg, 0).tasks:
        # map each centre onto its score row; centres are linearly independent so this is exact
        a, *_ = np.linalg.lstsq(task.visual_centers, task.visual_scores, rcond=None)
        b, *_ = np.linalg.lstsq(task.query_centers, task.query_scores, rcond=None)
        w = np.vstack([a, b])  # one linear map on [region mean; query mean]
        for s in task.train + task.test + task.novel:
            v, q = s.pair
            x = np.concatenate([task.visual_centers[v], task.query_centers[q]])
            assert 1 + int(np.argmax(x @ w)) == s.answer[0]


def test_task_names_and_default_sizes():
    stream = generate_stream(dataclasses.replace(StreamConfig(), num_tasks=2, train_per_task=3), 0)
    assert [t.name for t in stream.tasks] == list(TASK_NAMES[:2])
    assert len(TASK_NAMES) == 10
    assert len(stream.tasks[0].test) == 50 and len(stream.tasks[0].novel) == 50


@pytest.mark.parametrize("field,value", [("d", 0), ("vocab", 1), ("held_out", 16), ("num_tasks", 11),
                                         ("distractor_regions", 9), ("region_noise", -0.1)])
def test_invalid_configs(field, value):
    with pytest.raises(ConfigInvalid) as info:
        generate_stream(dataclasses.replace(StreamConfig(), **{field: value}), 0)
    assert info.value.field == field


# -- file format --------------------------------------------------------------------


def test_export_ingest_round_trip(tmp_path):
    stream = generate_stream(SMALL, 2)
    path = tmp_path / "features.ndjson"
    export_stream(stream, path)
    back = ingest_features(path)
    assert back.equals(stream)
    assert dumps_stream(back) == path.read_text()


def test_hand_written_fixture_field_by_field():
    stream = loads_stream(HAND_WRITTEN)
    assert (stream.d, stream.n, stream.L, stream.T, stream.vocab) == (2, 1, 1, 1, 3)
    a, b = stream.tasks
    assert a.task_id == 0 and a.name == "recognition" and len(a.train) == 1 and not a.novel
    s = a.train[0]
    assert s.regions.tolist() == [[0.5, -1.25]] and s.query.tolist() == [[2.0, 0.0]]
    assert s.answer == (2,) and s.pair == (1, 0) and s.task == 0
    s = b.novel[0]
    assert s.regions.tolist() == [[1e-3, 3.0]] and s.query.tolist() == [[-0.5, 0.75]]
    assert s.answer == (1,) and s.pair == (0, 1) and b.name == "location"


def test_truncated_file_names_failing_record(tmp_path):
    text = dumps_stream(generate_stream(SMALL, 0))
    path = tmp_path / "cut.ndjson"
    path.write_text(text[: len(text) // 2])
    n_lines = len(path.read_text().splitlines())
    with pytest.raises(ParseError) as info:
        ingest_features(path)
    assert info.value.record == n_lines
    assert str(info.value).startswith(f"record {n_lines}:")


@pytest.mark.parametrize(
    "mutate,error,record",
    [
        (lambda r: r.update(regions=[[1.0, 2.0, 3.0]]), ShapeMismatch, None),
        (lambda r: r.update(answer=[7]), ParseError, 2),
        (lambda r: r.update(split="val"), ParseError, 2),
        (lambda r: r.pop("query"), ParseError, 2),
        (lambda r: r.update(query=[["x", 0.0]]), ParseError, 2),
        (lambda r: r.update(answer=[1, 1]), ShapeMismatch, None),
    ],
)
def test_bad_records(mutate, error, record):
    lines = HAND_WRITTEN.splitlines()
    rec = json.loads(lines[1])
    mutate(rec)
    lines[1] = json.dumps(rec)
    with pytest.raises(error) as info:
        loads_stream("\n".join(lines))
    if record is not None:
        assert info.value.record == record
    assert "record 2" in str(info.value)


def test_bad_header():
    with pytest.raises(ParseError):
        loads_stream("")
    with pytest.raises(ParseError):
        loads_stream('{"version": 2, "d": 2, "n": 1, "L": 1, "T": 1, "vocab": 3}\n')
    with pytest.raises(ParseError):
        loads_stream('{"version": 1, "d": 2}\n')
