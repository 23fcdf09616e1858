import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsr.core import (
    DenseVector,
    DsrVector,
    ParseError,
    SparseVector,
    ValidationError,
    exact_sparse_dot,
    load_vocab,
    parse_dense_collection,
    parse_dsr_collection,
    parse_sparse_collection,
    sparse_to_json,
    write_jsonl,
)


def parse_one(line, vocab_size=30522):
    return list(parse_sparse_collection([line], vocab_size=vocab_size))


class TestParseSparse:
    def test_sorts_entries(self):
        (v,) = parse_one('{"id":"d1","vector":{"7":2.0,"3":1.5}}')
        assert v == SparseVector("d1", [(3, 1.5), (7, 2.0)])

    def test_empty_vector(self):
        (v,) = parse_one('{"id":"d2","vector":{}}')
        assert v.doc_id == "d2" and v.entries == []

    def test_dim_out_of_range(self):
        with pytest.raises(ParseError, match="line 1"):
            parse_one('{"id":"d3","vector":{"30522":1.0}}', vocab_size=30522)

    def test_last_valid_dim(self):
        (v,) = parse_one('{"id":"d3","vector":{"30521":1.0}}', vocab_size=30522)
        assert v.entries == [(30521, 1.0)]

    def test_malformed_line_names_line_number(self):
        lines = ['{"id":"a","vector":{}}', "", '{"id":"b","vector":']
        with pytest.raises(ParseError) as err:
            list(parse_sparse_collection(lines))
        assert err.value.lineno == 3

    def test_missing_key(self):
        with pytest.raises(ParseError):
            parse_one('{"vector":{}}')

    def test_negative_weight(self):
        with pytest.raises(ValidationError, match="negative"):
            parse_one('{"id":"a","vector":{"1":-0.5}}')

    def test_zero_weights_dropped(self):
        (v,) = parse_one('{"id":"a","vector":{"1":0.0,"2":0.5}}')
        assert v.entries == [(2, 0.5)]

    def test_reads_path(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text('{"id":"a","vector":{"4":1}}\n{"id":"b","vector":{"1":2}}\n')
        assert [v.doc_id for v in parse_sparse_collection(p)] == ["a", "b"]


class TestSparseVector:
    def test_rejects_unsorted(self):
        with pytest.raises(ValidationError):
            SparseVector("x", [(5, 1.0), (2, 1.0)])

    def test_rejects_duplicates(self):
        with pytest.raises(ValidationError):
            SparseVector("x", [(2, 1.0), (2, 3.0)])

    def test_rejects_zero_weight(self):
        with pytest.raises(ValidationError):
            SparseVector("x", [(2, 0.0)])

    def test_immutable(self):
        v = SparseVector("x", [(1, 1.0)])
        with pytest.raises(AttributeError):
            v.doc_id = "y"
        with pytest.raises(ValueError):
            v.weights[0] = 2.0

    def test_to_half_rounds(self):
        v = SparseVector("x", [(1, 0.1), (2, 1e-9)]).to_half()
        assert v.entries == [(1, float(np.float16(0.1)))]


class TestExactDot:
    def test_single_shared_dim(self):
        a = SparseVector("a", [(3, 1.5), (7, 2.0)])
        b = SparseVector("b", [(7, 3.0)])
        assert exact_sparse_dot(a, b) == 6.0

    def test_empty(self):
        a = SparseVector("a", [])
        b = SparseVector("b", [(7, 3.0)])
        assert exact_sparse_dot(a, b) == 0.0

    def test_self(self):
        a = SparseVector("a", [(1, 2.0), (9, 1.0)])
        assert exact_sparse_dot(a, a) == 5.0


sparse_vectors = st.dictionaries(
    st.integers(0, 200), st.floats(1e-3, 50, allow_nan=False), max_size=30
).map(lambda m: SparseVector.from_mapping("v", m))


@given(sparse_vectors, sparse_vectors)
def test_dot_symmetric(a, b):
    assert exact_sparse_dot(a, b) == exact_sparse_dot(b, a)


@given(sparse_vectors)
def test_self_dot_is_sum_of_squares(a):
    import math

    assert exact_sparse_dot(a, a) == math.fsum(w * w for _, w in a.entries)
    assert exact_sparse_dot(a, a) >= 0


@settings(max_examples=50)
@given(st.lists(sparse_vectors, max_size=5))
def test_roundtrip_serialization(vectors):
    vectors = [SparseVector(f"d{i}", v.entries) for i, v in enumerate(vectors)]
    buf = io.StringIO()
    write_jsonl(vectors, buf, sparse_to_json)
    back = list(parse_sparse_collection(buf.getvalue().splitlines()))
    assert back == vectors


def test_reserialized_json_content_identical():
    line = '{"id": "d1", "vector": {"7": 2.0, "3": 1.5}}'
    (v,) = parse_one(line)
    assert json.loads(sparse_to_json(v)) == json.loads(line)


class TestDense:
    def test_parse(self):
        vs = list(parse_dense_collection(['{"id":"a","vector":[1,2]}', '{"id":"b","vector":[0.5,0]}']))
        assert vs[1] == DenseVector("b", [0.5, 0.0])

    def test_mixed_dims(self):
        with pytest.raises(ParseError, match="line 2"):
            list(parse_dense_collection(['{"id":"a","vector":[1,2]}', '{"id":"b","vector":[1]}']))

    def test_overflow(self):
        with pytest.raises(ParseError):
            list(parse_dense_collection(['{"id":"a","vector":[1e6]}']))


class TestDsr:
    def test_parse(self):
        (v,) = parse_dsr_collection(['{"id":"q","values":[2,1,3],"indices":[1,4,0]}'])
        assert v == DsrVector("q", [2, 1, 3], [1, 4, 0])

    def test_negative_rejected(self):
        with pytest.raises(ValidationError):
            DsrVector("q", [-1.0], [0])

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            DsrVector("q", [1.0, 2.0], [0])


def test_vocab(tmp_path):
    p = tmp_path / "vocab.txt"
    p.write_text("[PAD]\nhello\nworld\n")
    assert load_vocab(p) == ["[PAD]", "hello", "world"]
