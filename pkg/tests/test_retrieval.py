import warnings
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from src.errors import (
    ConfigurationError,
    ContractViolationError,
    NumericError,
    ZeroNormWarning,
)
from src.fusion import FusedPair
from src.retrieval import (
    RECALL_LEVELS,
    MetricsReport,
    RetrievalResult,
    SimilarityWeights,
    compute_metrics,
    cosine,
    pair_similarity,
    rank,
    recall_at_k,
    search,
    sort_scores,
    sum_r,
)
from src.tensorops import Tensor
from src.video_encoder import VideoRepr


def make_pair(q, V_c, V_v):
    fused = FusedPair(None, None, None, None, Tensor(q))
    video = VideoRepr(None, None, None, Tensor(V_v), None, [], V_c=Tensor(V_c))
    return fused, video

@st.composite
def result_sets(draw):
    n_videos  = draw(st.integers(1, 30))
    n_queries = draw(st.integers(1, 20))
    ids = [ f"v{i:02d}" for i in range(n_videos) ]
    results = []
    for j in range(n_queries):
        order = draw(st.permutations(ids))
        ranking = [ (vid, float(n_videos - i)) for i, vid in enumerate(order) ]
        results.append(RetrievalResult(f"q{j}", ranking, draw(st.sampled_from(ids))))
    return results


# Similarity ------------------------------------------------------------------

def test_cosine_examples(float64):
    assert cosine(Tensor([1.0, 0.0]), Tensor([2.0, 0.0])).item() == pytest.approx(1)
    assert cosine(Tensor([1.0, 0.0]), Tensor([0.0, 3.0])).item() == pytest.approx(0)
    assert cosine(Tensor([1.0, 1.0]), Tensor([-1.0, -1.0])).item() == pytest.approx(-1)
    rows = cosine(Tensor([1.0, 0.0]), Tensor([[1.0, 1.0], [0.0, 1.0]])).data
    np.testing.assert_allclose(rows, [1/np.sqrt(2), 0], atol=1e-12)

def test_cosine_zero_norm_warns():
    with pytest.warns(ZeroNormWarning):
        out = cosine(Tensor([0.0, 0.0]), Tensor([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(out.data, 0)

def test_cosine_shape_error():
    with pytest.raises(ContractViolationError):
        cosine(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))

@pytest.mark.parametrize("w_clip,w_vid", [(0.6, 0.6), (-0.5, 1.5)])
def test_bad_similarity_weights(w_clip, w_vid):
    with pytest.raises(ConfigurationError):
        SimilarityWeights(w_clip, w_vid)

def test_identical_vectors_score_one(float64):
    q = np.array([1.0, 2.0, -1.0])
    fused, video = make_pair(q, [[0.0, 1.0, 0.0], q * 3], q)
    assert pair_similarity(fused, video).item() == pytest.approx(1)

def test_orthogonal_vectors_score_zero(float64):
    fused, video = make_pair([1.0, 0.0, 0.0], [[0.0, 1.0, 0.0], [0.0, 0.0, 2.0]], [0.0, 1.0, 1.0])
    assert pair_similarity(fused, video).item() == pytest.approx(0, abs=1e-12)

@pytest.mark.parametrize("w_clip", [0.0, 0.3, 0.5, 1.0])
def test_pair_similarity_oracle(float64, rng, w_clip):
    q, V_c, V_v = rng.normal(size=4), rng.normal(size=(6, 4)), rng.normal(size=4)
    cos = lambda a, b: a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    expected = w_clip * max(cos(q, row) for row in V_c) + (1 - w_clip) * cos(q, V_v)
    weights = SimilarityWeights(w_clip, 1 - w_clip)
    assert pair_similarity(*make_pair(q, V_c, V_v), weights).item() == pytest.approx(expected, rel=1e-12, abs=1e-12)


# Ranking ---------------------------------------------------------------------

def test_sort_scores_examples():
    assert [ k for k, _ in sort_scores({"c": 0.1, "a": 0.9, "b": 0.5}) ] == ["a", "b", "c"]
    ties = sort_scores({"b": 0.5, "a": 0.5, "d": 0.7, "c": 0.5})
    assert [ k for k, _ in ties ] == ["d", "a", "b", "c"]

def test_sort_scores_rejects_non_finite():
    with pytest.raises(NumericError, match="b"):
        sort_scores({"a": 0.5, "b": float("nan")})

def test_sort_matches_brute_force_with_ties(rng):
    ids = [ f"video{i:02d}" for i in range(20) ]
    scores = dict(zip(ids, rng.normal(size=20).round(1)))
    ranking = sort_scores(scores)
    assert sorted(ranking, key=lambda kv: kv[0]) == sorted(scores.items())
    for (id1, s1), (id2, s2) in zip(ranking, ranking[1:]):
        assert s1 > s2 or (s1 == s2 and id1 < id2)

@settings(max_examples=50, deadline=None)
@given(
    st.dictionaries(
        st.text("abc", min_size=1, max_size=3),
        st.integers(-100, 100).map(lambda k: k / 100),
        min_size=1
    ),
    st.sampled_from([1e-3, 0.5, 3.0, 1e3]),
)
def test_ranking_invariant_to_positive_scaling(scores, scale):
    scaled = { k: v * scale for k, v in scores.items() }
    assert [ k for k, _ in sort_scores(scores) ] == [ k for k, _ in sort_scores(scaled) ]

def test_rank_single_video(tiny_model, tiny_corpus):
    caption = tiny_corpus.captions[0]
    text  = tiny_model.encode_text(caption.features)
    video = tiny_model.encode_video(tiny_corpus.videos[caption.video_id])
    result = rank(tiny_model, text, {caption.video_id: video}, target_id=caption.video_id)
    assert result.target_rank == 1
    assert len(result.ranking) == 1

def test_rank_empty_corpus(tiny_model, tiny_corpus):
    text = tiny_model.encode_text(tiny_corpus.captions[0].features)
    with pytest.raises(ContractViolationError):
        rank(tiny_model, text, {})

def test_search_is_deterministic(tiny_model, tiny_corpus):
    results  = search(tiny_model, tiny_corpus)
    threaded = search(tiny_model, tiny_corpus, n_jobs=2)
    assert len(results) == len(tiny_corpus.captions)
    for a, b in zip(results, threaded):
        assert a.query_id == b.query_id
        assert a.ranking == b.ranking
        assert sorted(vid for vid, _ in a.ranking) == tiny_corpus.video_ids
    assert compute_metrics(results) == compute_metrics(threaded)

def test_search_matches_rank(tiny_model, tiny_corpus):
    result = search(tiny_model, tiny_corpus)[1]
    caption = tiny_corpus.captions[1]
    videos = { vid: tiny_model.encode_video(tiny_corpus.videos[vid]) for vid in tiny_corpus.video_ids }
    expected = rank(tiny_model, tiny_model.encode_text(caption.features), videos)
    assert result.ranking == expected.ranking


# Metrics ---------------------------------------------------------------------

def _result(target_rank, n=10):
    ids = [ f"v{i}" for i in range(n) ]
    return RetrievalResult("q", [ (vid, -i) for i, vid in enumerate(ids) ], ids[target_rank - 1])

def test_recall_examples():
    results = [ _result(1) ] * 3 + [ _result(4) ] * 7
    assert recall_at_k(results, 1) == 30.0
    assert recall_at_k(results, 5) == 100.0
    assert _result(3).target_rank == 3
    report = compute_metrics([ _result(3) ])
    assert (report.r1, report.r5, report.r10, report.r100) == (0.0, 100.0, 100.0, 100.0)

def test_recall_errors():
    with pytest.raises(ConfigurationError):
        recall_at_k([ _result(1) ], 0)
    with pytest.raises(ContractViolationError):
        recall_at_k([], 1)

@settings(max_examples=100, deadline=None)
@given(result_sets())
def test_recall_matches_brute_force(results):
    for K in RECALL_LEVELS:
        hits = 0
        for r in results:
            position = [ vid for vid, _ in r.ranking ].index(r.target_id) + 1
            hits += position <= K
        assert recall_at_k(results, K) == 100 * hits / len(results)
    report = compute_metrics(results)
    assert report.r1 <= report.r5 <= report.r10 <= report.r100

@pytest.mark.parametrize("recalls,expected", [
    ((8.0, 25.4, 37.2, 76.8), 147.4),
    ((2.0, 8.8, 14.2, 51.5), 76.5),
    ((0.0, 0.0, 0.0, 0.0), 0.0),
])
def test_sum_r(recalls, expected):
    report = MetricsReport(*recalls)
    assert report.sum_r == pytest.approx(expected)
    assert sum_r(report) == report.sum_r

def test_report_serialization():
    report = MetricsReport(8.0, 25.4, 37.2, 76.8)
    assert report.table_row("full") == r"full & 8.0 & 25.4 & 37.2 & 76.8 & 147.4 \\"
    text = report.to_text("full").splitlines()
    assert text[0] == "label=full"
    assert "r5=25.4" in text
    assert text[-1].startswith("row=full & ")
    assert '"label": "full"' in report.to_json(label="full")

def test_no_warning_for_regular_vectors(float64, rng):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        cosine(Tensor(rng.normal(size=3)), Tensor(rng.normal(size=(2, 3))))
