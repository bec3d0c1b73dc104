"""Embedding and training-pair record formats, plus the synthetic corpora."""

import io
import json
import pytest
import numpy as np
from src.scoring import Pooling, PooledVector, TokenMatrix
from src.interchange import (
    dumps_record,
    load_embedding_file,
    lookup,
    read_embeddings,
    read_training_pairs,
    representation_to_record,
    write_embeddings,
)
from src.synthetic import STOPWORDS, distractor_corpus, synthetic_training_pairs, write_distractor_corpus


class TestEmbeddingRecords:
    """Token and pooled interchange records."""

    @pytest.mark.unit
    @pytest.mark.interchange
    def test_token_record(self):
        """Test reading a token-matrix record."""
        reps = list(read_embeddings(['{"id": "d1", "tokens": [[1, 0], [0, 2]]}']))
        assert isinstance(reps[0], TokenMatrix)
        assert reps[0].rows == 2
        assert not reps[0].normalized

    @pytest.mark.unit
    @pytest.mark.interchange
    def test_pooled_record(self):
        """Test reading a pooled record with its pooling strategy."""
        reps = list(read_embeddings(['{"id": "p", "vector": [0.6, 0.8], "pooling": "last_token"}']))
        assert isinstance(reps[0], PooledVector)
        assert reps[0].pooling is Pooling.LAST_TOKEN

    @pytest.mark.unit
    @pytest.mark.interchange
    def test_blank_lines_skipped(self):
        """Test that blank lines are skipped."""
        lines = ['{"id": "a", "vector": [1.0]}', "", "   ", '{"id": "b", "vector": [1.0]}']
        assert [r.id for r in read_embeddings(lines)] == ["a", "b"]

    @pytest.mark.unit
    @pytest.mark.interchange
    @pytest.mark.parametrize("line,message", [
        ("{broken", "malformed JSON"),
        ('{"tokens": [[1.0]]}', "invalid record"),
        ('{"id": "x", "tokens": []}', "invalid record"),
        ('{"id": "x", "vector": ["a"]}', "invalid record"),
    ])
    def test_invalid_records(self, line, message):
        """Test that malformed or schema-invalid records are rejected."""
        with pytest.raises(ValueError, match=message):
            list(read_embeddings([line]))

    @pytest.mark.unit
    @pytest.mark.interchange
    def test_flagged_normalized_rows_checked(self):
        """Test that rows flagged as normalized must be unit length."""
        with pytest.raises(ValueError, match="non-unit"):
            list(read_embeddings(['{"id": "d", "tokens": [[2.0, 0.0]], "normalized": true}']))

    @pytest.mark.unit
    @pytest.mark.interchange
    def test_write_is_canonical(self, random_matrix):
        """Test that written records use sorted keys and read back unchanged."""
        m = random_matrix(2, 3, id="doc")
        out = io.StringIO()
        assert write_embeddings([m], out) == 1
        line = out.getvalue()
        assert line == dumps_record(representation_to_record(m)) + "\n"
        assert list(json.loads(line)) == sorted(json.loads(line))
        again = list(read_embeddings([line]))[0]
        np.testing.assert_array_equal(again.values, m.values)

    @pytest.mark.unit
    @pytest.mark.interchange
    def test_load_embedding_file_and_lookup(self, tmp_path, random_pooled):
        """Test loading a file and looking documents up by id."""
        path = tmp_path / "emb.jsonl"
        with open(path, "w", encoding="utf-8") as f:
            write_embeddings([random_pooled(4, "a"), random_pooled(4, "b")], f)
        reps = load_embedding_file(str(path))
        assert list(lookup(reps)) == ["a", "b"]
        assert list(lookup(reps, ["b"])) == ["b"]
        with pytest.raises(ValueError, match="Unknown document ids"):
            lookup(reps, ["c"])


class TestTrainingPairRecords:
    """Training pair files."""

    @pytest.mark.unit
    @pytest.mark.interchange
    def test_read_pairs(self):
        """Test reading training pairs with and without negatives."""
        pairs = read_training_pairs([
            '{"query": "red apples", "positive_id": "d1"}',
            '{"query": "green", "positive_id": "d2", "negative_ids": ["d1"]}',
        ])
        assert pairs[0].negative_ids == []
        assert pairs[1].negative_ids == ["d1"]

    @pytest.mark.unit
    @pytest.mark.interchange
    def test_empty_query_rejected(self):
        """Test that an empty query is reported by line number."""
        with pytest.raises(ValueError, match="Line 1"):
            read_training_pairs(['{"query": "", "positive_id": "d1"}'])


class TestSyntheticCorpora:
    """Deterministic generators."""

    @pytest.mark.unit
    @pytest.mark.interchange
    def test_distractor_layout(self):
        """Test the shared, unique and filler token layout of distractor documents."""
        corpus = distractor_corpus()
        assert len(corpus.documents) == 200
        tokens = corpus.documents[0][1].split()
        assert tokens[:9] == "g00t0 g00t1 g00t2 g00t3 u000 g00t4 g00t5 g00t6 g00t7".split()
        assert tokens[9:] == [f"f000n{j:02d}" for j in range(32)]
        assert corpus.queries[15] == ("q015", "u015 g01t0 g01t1")
        assert corpus.qrels["q199"] == {"doc199": 1}

    @pytest.mark.unit
    @pytest.mark.interchange
    def test_write_distractor_corpus(self, tmp_path):
        """Test writing the corpus, queries and qrels files."""
        paths = write_distractor_corpus(distractor_corpus(groups=2, docs_per_group=3), str(tmp_path))
        with open(paths["qrels"], encoding="utf-8") as f:
            assert f.readline() == "q000 0 doc000 1\n"
        with open(paths["corpus"], encoding="utf-8") as f:
            assert len(f.readlines()) == 6

    @pytest.mark.unit
    @pytest.mark.interchange
    def test_training_pairs_shape(self):
        """Test token counts and query overlap of synthetic pairs."""
        pairs = synthetic_training_pairs(10, seed=3)
        assert len({p.doc_id for p in pairs}) == 10
        for pair in pairs:
            doc_tokens, query_tokens = pair.document.split(), pair.query.split()
            assert len(doc_tokens) == 12
            assert len(query_tokens) == 8
            assert sum(t in STOPWORDS for t in doc_tokens) == 6
            assert set(query_tokens[:2]) <= set(doc_tokens)

    @pytest.mark.unit
    @pytest.mark.interchange
    def test_training_pairs_deterministic(self):
        """Test that pair generation depends only on the seed."""
        assert synthetic_training_pairs(5, seed=1) == synthetic_training_pairs(5, seed=1)
        assert synthetic_training_pairs(5, seed=1) != synthetic_training_pairs(5, seed=2)

    @pytest.mark.unit
    @pytest.mark.interchange
    def test_mixed_modality(self):
        """Test alternating modalities and rejection of unknown ones."""
        pairs = synthetic_training_pairs(4, seed=0, modality="mixed")
        assert [p.modality for p in pairs] == ["text", "image", "text", "image"]
        with pytest.raises(ValueError, match="modality"):
            synthetic_training_pairs(4, seed=0, modality="audio")
