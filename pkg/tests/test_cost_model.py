"""Storage estimates, compression what-ifs and the reranker latency model."""

import json
import pytest
from src.cost_model import (
    GIB,
    REFERENCE_LATENCY_POINTS,
    REFERENCE_PIPELINES,
    CostScenario,
    LatencyModel,
    binary_savings,
    compression_whatif,
    fit_latency_model,
    pipeline_tradeoff_report,
    read_scenarios,
    storage_estimate,
)


class TestStorageEstimate:
    """Corpus storage arithmetic."""

    @pytest.mark.unit
    @pytest.mark.cost
    @pytest.mark.parametrize("sequence_length,dim,expected", [
        (1802, 3072, "10311.1 GB"),
        (1290, 512, "1230.2 GB"),
        (751, 128, "179.1 GB"),
        (1, 1536, "2.9 GB"),
        (1, 2048, "3.8 GB"),
    ])
    def test_reference_figures(self, sequence_length, dim, expected):
        """Test storage for a million documents at the published configurations."""
        estimate = storage_estimate(CostScenario(sequence_length, dim, "fp16", 1_000_000))
        assert estimate.gb_display == expected

    @pytest.mark.unit
    @pytest.mark.cost
    @pytest.mark.parametrize("sequence_length,dim,elements", [
        (1802, 3072, 5_535_744),
        (1290, 512, 660_480),
        (751, 128, 96_128),
    ])
    def test_elements_per_doc(self, sequence_length, dim, elements):
        """Test elements per document as sequence length times dim."""
        assert storage_estimate(CostScenario(sequence_length, dim)).elements_per_doc == elements

    @pytest.mark.unit
    @pytest.mark.cost
    def test_binary_is_sixteen_times_smaller(self):
        """Test that 1-bit storage is a sixteenth of fp16."""
        fp16 = storage_estimate(CostScenario(1802, 3072, "fp16"))
        bit1 = storage_estimate(CostScenario(1802, 3072, "bit1"))
        assert fp16.bytes == 16 * bit1.bytes
        assert binary_savings(CostScenario(1802, 3072, "fp16")).savings_percent == pytest.approx(93.75)

    @pytest.mark.unit
    @pytest.mark.cost
    def test_bytes_per_element(self):
        """Test bytes per element for each precision."""
        assert [CostScenario(1, 1, p).bytes_per_element for p in ("fp32", "fp16", "int8", "bit1")] == \
            [4.0, 2.0, 1.0, 0.125]

    @pytest.mark.unit
    @pytest.mark.cost
    def test_empty_corpus(self):
        """Test that an empty corpus needs no storage."""
        estimate = storage_estimate(CostScenario(1802, 3072, corpus_size=0))
        assert estimate.bytes == 0
        assert estimate.to_dict()["gib"] == 0.0

    @pytest.mark.unit
    @pytest.mark.cost
    def test_gib_divisor(self):
        """Test that GiB uses a 2 ** 30 divisor."""
        estimate = storage_estimate(CostScenario(1, 1024, "fp32", corpus_size=2 ** 18))
        assert estimate.bytes == GIB
        assert estimate.gib == 1.0

    @pytest.mark.property
    @pytest.mark.cost
    def test_linear_in_each_factor(self, rng):
        """Test that storage scales linearly in each factor."""
        for _ in range(200):
            base = CostScenario(int(rng.integers(1, 3000)), int(rng.integers(1, 4096)),
                                str(rng.choice(["fp32", "fp16", "int8", "bit1"])), int(rng.integers(0, 10 ** 4)))
            c = int(rng.integers(2, 9))
            reference = storage_estimate(base).bytes
            for scaled in (
                CostScenario(base.sequence_length * c, base.dim, base.precision, base.corpus_size),
                CostScenario(base.sequence_length, base.dim * c, base.precision, base.corpus_size),
                CostScenario(base.sequence_length, base.dim, base.precision, base.corpus_size * c),
            ):
                assert storage_estimate(scaled).bytes == c * reference

    @pytest.mark.unit
    @pytest.mark.cost
    def test_invalid_scenarios(self):
        """Test scenario field validation."""
        with pytest.raises(ValueError, match="precision"):
            CostScenario(10, 10, "fp8")
        with pytest.raises(ValueError, match="positive"):
            CostScenario(0, 10)
        with pytest.raises(ValueError, match="corpus_size"):
            CostScenario(10, 10, corpus_size=-1)
        with pytest.raises(ValueError, match="rerank_depth"):
            CostScenario(1, 10, rerank_depth=0)


class TestCompressionWhatIf:
    """Projection, late pooling and precision changes."""

    @pytest.mark.unit
    @pytest.mark.cost
    def test_smaller_resolution_and_projection(self):
        """Test the savings from a smaller resolution plus a 512-dim projection."""
        report = compression_whatif(CostScenario(1802, 3072), projection_dim=512, sequence_length=1290)
        assert report.savings_percent == pytest.approx(88.07, abs=0.01)
        assert report.to_dict()["savings_percent"] == 88.1
        assert report.to_dict()["after"]["gib"] == 1230.2

    @pytest.mark.unit
    @pytest.mark.cost
    def test_identity(self):
        """Test that a what-if with no changes saves nothing."""
        report = compression_whatif(CostScenario(1802, 3072))
        assert report.savings_percent == 0.0
        assert report.after == report.before

    @pytest.mark.unit
    @pytest.mark.cost
    def test_late_pool_ceiling(self):
        """Test that late pooling rounds the sequence length up."""
        report = compression_whatif(CostScenario(1802, 3072), late_pool_factor=4)
        assert report.after.sequence_length == 451

    @pytest.mark.unit
    @pytest.mark.cost
    def test_precision_change(self):
        """Test the savings from fp32 to int8."""
        report = compression_whatif(CostScenario(100, 128, "fp32"), precision="int8")
        assert report.savings_percent == 75.0

    @pytest.mark.unit
    @pytest.mark.cost
    def test_zero_corpus(self):
        """Test that an empty corpus reports zero savings."""
        assert compression_whatif(CostScenario(10, 10, corpus_size=0), late_pool_factor=2).savings_percent == 0.0

    @pytest.mark.unit
    @pytest.mark.cost
    def test_invalid_arguments(self):
        """Test that a larger projection or bad pool factor is rejected."""
        with pytest.raises(ValueError, match="projection_dim"):
            compression_whatif(CostScenario(10, 128), projection_dim=256)
        with pytest.raises(ValueError, match="late_pool_factor"):
            compression_whatif(CostScenario(10, 128), late_pool_factor=0)


class TestLatencyModel:
    """Affine reranker latency."""

    @pytest.mark.unit
    @pytest.mark.cost
    def test_reference_fit(self):
        """Test the fit over the reference latency points."""
        model = fit_latency_model(REFERENCE_LATENCY_POINTS)
        assert model.per_candidate_ms == pytest.approx(93.7, abs=0.05)
        assert model.base_ms == pytest.approx(23.0, abs=2.0)
        for candidates, observed in REFERENCE_LATENCY_POINTS:
            assert abs(model.predict(candidates) - observed) < 0.01 * observed

    @pytest.mark.unit
    @pytest.mark.cost
    def test_predict_fifty(self):
        """Test the predicted latency at 50 candidates."""
        model = fit_latency_model([(10, 960), (25, 2368), (100, 9392)])
        assert model.predict(50) == pytest.approx(4709, abs=1.0)

    @pytest.mark.unit
    @pytest.mark.cost
    def test_two_points_interpolate(self):
        """Test that two points are fitted exactly."""
        model = fit_latency_model([(2, 30.0), (6, 70.0)])
        assert model.base_ms == pytest.approx(10.0, abs=1e-9)
        assert model.per_candidate_ms == pytest.approx(10.0, abs=1e-9)

    @pytest.mark.unit
    @pytest.mark.cost
    def test_degenerate_points(self):
        """Test that a single distinct candidate count is rejected."""
        with pytest.raises(ValueError, match="two distinct"):
            fit_latency_model([(5, 10.0), (5, 12.0)])

    @pytest.mark.unit
    @pytest.mark.cost
    @pytest.mark.parametrize("points", [[(1, 10.0), (2, 5.0)], [(10, 900.0), (20, 850.0), (40, 700.0)]])
    def test_non_positive_slope_rejected(self, points):
        """Test that a fit whose latency does not grow with candidates is rejected."""
        with pytest.raises(ValueError, match="not positive"):
            fit_latency_model(points)


class TestTradeoffReport:
    """Storage and latency table."""

    @pytest.mark.unit
    @pytest.mark.cost
    def test_reference_storage_column(self):
        """Test the storage column for the reference pipelines."""
        table = pipeline_tradeoff_report(REFERENCE_PIPELINES[:5], LatencyModel(0.0, 1.0))
        assert [row["storage_gib"] for row in table.rows] == [10311.1, 1230.2, 179.1, 2.9, 3.8]
        assert all(row["added_latency_ms"] == 0.0 for row in table.rows)

    @pytest.mark.unit
    @pytest.mark.cost
    def test_single_scenario(self):
        """Test a one-row report and its header."""
        table = pipeline_tradeoff_report([CostScenario(1, 2048, label="bi")], LatencyModel(20.0, 90.0))
        assert len(table.rows) == 1
        assert "storage_gib" in table.to_text().splitlines()[0]

    @pytest.mark.unit
    @pytest.mark.cost
    def test_rerank_depth_changes_latency_only(self):
        """Test that rerank depth moves latency but not storage."""
        model = fit_latency_model(REFERENCE_LATENCY_POINTS)
        table = pipeline_tradeoff_report(
            [CostScenario(1, 2048, rerank_depth=10, label="a"), CostScenario(1, 2048, rerank_depth=100, label="b")],
            model,
        )
        a, b = table.rows
        assert a["storage_gib"] == b["storage_gib"]
        assert a["added_latency_ms"] == pytest.approx(model.predict(10))
        assert b["added_latency_ms"] > a["added_latency_ms"]

    @pytest.mark.unit
    @pytest.mark.cost
    def test_sorting_and_accuracy_passthrough(self):
        """Test sorting and that accuracy columns pass through."""
        table = pipeline_tradeoff_report(REFERENCE_PIPELINES, fit_latency_model(REFERENCE_LATENCY_POINTS))
        ordered = table.sorted_by("storage_gib", descending=True)
        assert ordered.rows[0]["label"] == "multi-3072"
        assert ordered.rows[0]["accuracy"] == REFERENCE_PIPELINES[0].accuracy
        assert "ndcg5_v1" in table.to_text().splitlines()[0]
        with pytest.raises(ValueError, match="Unknown column"):
            table.sorted_by("speed")

    @pytest.mark.unit
    @pytest.mark.cost
    def test_empty_report(self):
        """Test that an empty scenario list is rejected."""
        with pytest.raises(ValueError):
            pipeline_tradeoff_report([], LatencyModel(0.0, 1.0))


class TestScenarioFiles:
    """Line-oriented scenario records."""

    @pytest.mark.unit
    @pytest.mark.cost
    def test_read_scenarios(self):
        """Test reading scenario records with optional fields."""
        lines = [
            json.dumps({"label": "mv", "sequence_length": 1802, "dim": 3072, "precision": "fp16",
                        "corpus_size": 1000000}),
            "",
            json.dumps({"sequence_length": 1, "dim": 2048, "precision": "fp16", "corpus_size": 10,
                        "rerank_depth": 25, "accuracy": {"ndcg5": 0.9}}),
        ]
        scenarios = read_scenarios(lines)
        assert [s.label for s in scenarios] == ["mv", ""]
        assert scenarios[1].rerank_depth == 25
        assert scenarios[1].accuracy == {"ndcg5": 0.9}

    @pytest.mark.unit
    @pytest.mark.cost
    @pytest.mark.parametrize("line", [
        "{not json",
        json.dumps({"sequence_length": 1, "dim": 2, "precision": "fp64", "corpus_size": 1}),
        json.dumps({"sequence_length": 1, "dim": 2, "precision": "fp16"}),
    ])
    def test_invalid_lines(self, line):
        """Test that malformed scenario lines are reported by line number."""
        with pytest.raises(ValueError, match="Scenario line 1"):
            read_scenarios([line])
