import json

import numpy as np
import pytest

from pmiv.ast_ingest import file_document_from_obj
from pmiv.integration import (DEFAULT_PARTITION, Partition, antiderivative, default_catalog,
                              uniform_integral)
from pmiv.pagerank import pagerank
from pmiv.sdfg import build_sdfg
from pmiv.synth import generate, texture_spec
from pmiv.vectorize import (PMIV, UMIV, FeatureConfig, FileVector, Vectorizer, VectorizeError,
                            dedup_hash, stack_vectors, vectorize_file_pmiv, vectorize_file_umiv)
from conftest import HELLO_WORLD


@pytest.fixture(scope="module")
def sample_docs():
    return [d for d, _ in generate(texture_spec(3, seed=11))]


def test_vector_lengths(hello_doc):
    assert len(vectorize_file_pmiv(hello_doc).values) == 33 * 10 * 2 + 7 == 667
    assert len(vectorize_file_umiv(hello_doc).values) == 33 * 2 + 7 == 73


def test_schema_columns():
    vz = Vectorizer()
    cols = vz.schema(PMIV).columns
    assert cols[0] == "AddressOf_ExpectedType_1_mean"
    assert cols[9] == "AddressOf_ExpectedType_100_mean"
    assert cols[10] == "AddressOf_ExpectedType_1_std"
    assert "ClassRef_ExpectedType_60_std" in cols
    assert cols[-7:] == ("fcg_component_size_ratio", "fcg_component_count", "fcg_degree_mean",
                         "fcg_degree_std", "fcg_vertex_count", "fcg_edge_count",
                         "fcg_crypto_flag")
    assert vz.schema(UMIV).columns[:2] == ("AddressOf_ExpectedType_mean",
                                           "AddressOf_ExpectedType_std")


def test_schema_hash_tracks_mode_and_partition():
    a, b = Vectorizer(), Vectorizer(FeatureConfig(partition=(0.5, 1.0)))
    assert a.schema(PMIV).schema_hash != a.schema(UMIV).schema_hash
    assert a.schema(PMIV).schema_hash != b.schema(PMIV).schema_hash
    assert a.schema(UMIV).schema_hash == b.schema(UMIV).schema_hash
    c = Vectorizer(FeatureConfig(expected_type_kinds=("Call",)))
    assert c.schema(UMIV).schema_hash != a.schema(UMIV).schema_hash


def test_hello_world_call_graph_tail(hello_doc):
    v = vectorize_file_pmiv(hello_doc)
    assert v.values[-7:].tolist() == [1.0, 2.0, 0.0, 0.0, 2.0, 0.0, 0.0]
    assert v.metadata["sdfgs"] == 2 and v.metadata["eval_warnings"] == 1


def test_no_functions_gives_zero_block():
    doc = file_document_from_obj({"file_id": "e", "functions": [{"name": "m", "nodes": {}}]})
    v = vectorize_file_pmiv(doc)
    assert not v.values[:-7].any()
    assert v.metadata["no_sdfgs"] and v.metadata["empty_sdfgs"] == 1


def pmiv_oracle(doc, cfg=FeatureConfig()):
    """Straightforward per-graph, per-function recomputation."""
    part = Partition(cfg.partition)
    graphs = [g for g in (build_sdfg(fn) for fn in doc.functions) if not g.is_empty]
    rows = []
    for f in default_catalog():
        curves = np.array([antiderivative(g, pagerank(g), f, part).values for g in graphs])
        rows.append(np.concatenate([curves.mean(axis=0), curves.std(axis=0)]))
    return np.concatenate(rows)


def umiv_oracle(doc):
    graphs = [g for g in (build_sdfg(fn) for fn in doc.functions) if not g.is_empty]
    out = []
    for f in default_catalog():
        vals = np.array([uniform_integral(g, f) for g in graphs])
        out += [vals.mean(), vals.std()]
    return np.array(out)


def test_pmiv_matches_oracle(sample_docs):
    for doc in sample_docs:
        got = vectorize_file_pmiv(doc).values[:-7]
        np.testing.assert_allclose(got, pmiv_oracle(doc), rtol=1e-12, atol=1e-12)


def test_umiv_matches_oracle(sample_docs):
    for doc in sample_docs:
        got = vectorize_file_umiv(doc).values[:-7]
        np.testing.assert_allclose(got, umiv_oracle(doc), rtol=1e-12, atol=1e-12)


def test_terminal_threshold_mean_equals_average_expectation(hello_doc):
    vz = Vectorizer()
    v = vz.vectorize(hello_doc).values
    cols = vz.schema(PMIV).columns
    i = cols.index("Call_ExpectedType_100_mean")
    graphs = [build_sdfg(fn) for fn in hello_doc.functions]
    full = [pagerank(g).probabilities[[n.kind == "Call" for n in g.nodes]].sum() for g in graphs]
    assert v[i] == pytest.approx(np.mean(full), rel=1e-14)


def permuted(doc_obj):
    obj = json.loads(json.dumps(doc_obj))
    obj["functions"] = obj["functions"][::-1]
    return file_document_from_obj(obj)


def test_function_order_does_not_matter(sample_docs):
    from pmiv.ast_ingest import file_document_to_obj
    for doc in sample_docs:
        other = permuted(file_document_to_obj(doc))
        a, b = Vectorizer().vectorize_both(doc), Vectorizer().vectorize_both(other)
        for x, y in zip(a, b):
            assert np.array_equal(x.values, y.values)
        assert dedup_hash(doc) == dedup_hash(other)


def test_dedup_ignores_node_ids():
    renamed = json.loads(json.dumps(HELLO_WORLD))
    main = renamed["functions"][0]
    main["nodes"] = {"a" + k: dict(v) for k, v in main["nodes"].items()}
    main["entry"] = ["a3", "a4"]
    call = main["nodes"]["a3"]
    call["target"], call["arguments"] = "a1", ["a2"]
    assert dedup_hash(file_document_from_obj(renamed)) == \
        dedup_hash(file_document_from_obj(HELLO_WORLD))


def test_dedup_sees_label_changes():
    changed = json.loads(json.dumps(HELLO_WORLD))
    changed["functions"][0]["nodes"]["3"]["fnName"] = "System.Console.Write"
    assert dedup_hash(file_document_from_obj(changed)) != \
        dedup_hash(file_document_from_obj(HELLO_WORLD))


def test_vectorize_both_equals_single_modes(sample_docs):
    vz = Vectorizer()
    p, u = vz.vectorize_both(sample_docs[0])
    assert np.array_equal(p.values, vz.vectorize(sample_docs[0], PMIV).values)
    assert np.array_equal(u.values, vz.vectorize(sample_docs[0], UMIV).values)


def test_record_round_trip(hello_doc):
    v = vectorize_file_pmiv(hello_doc)
    back = FileVector.from_record(json.loads(json.dumps(v.to_record())))
    assert np.array_equal(back.values, v.values) and back.schema_hash == v.schema_hash


def test_stack_rejects_mixed_schemas(hello_doc):
    p, u = Vectorizer().vectorize_both(hello_doc)
    assert stack_vectors([p, p]).shape == (2, 667)
    with pytest.raises(VectorizeError):
        stack_vectors([p, u])
    with pytest.raises(VectorizeError):
        stack_vectors([])


def test_bad_mode(hello_doc):
    with pytest.raises(VectorizeError):
        Vectorizer().vectorize(hello_doc, "bogus")


@pytest.mark.parametrize("kw", [{"transport_p": 0.0}, {"transport_p": 1.0}, {"max_paths": 0},
                                {"partition": (0.5,)}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        FeatureConfig(**kw)


def test_default_partition_in_config():
    assert FeatureConfig().partition == DEFAULT_PARTITION
