import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sviplus.data import (
    ClusterSpec,
    FeatureMatrix,
    gen_gmm_synthetic,
    gen_lda_synthetic,
    gen_ratings_synthetic,
    parse_bow,
    parse_movielens,
    parse_numeric_csv,
    write_bow,
    write_movielens,
)
from sviplus.errors import ContractError, ParseError


def _write(path, text):
    path.write_text(text)
    return path


# ---------------------------------------------------------------------------
# MovieLens


def test_movielens_single_line(tmp_path):
    ds = parse_movielens(_write(tmp_path / "r.dat", "1::10::5::978300760\n"))
    assert (ds.n_ratings, ds.users[0], ds.items[0], ds.ratings[0]) == (1, 0, 0, 5.0)


def test_movielens_same_user(tmp_path):
    ds = parse_movielens(_write(tmp_path / "r.dat", "7::10::5::1\n7::11::3::2\n"))
    assert ds.n_users == 1 and ds.n_ratings == 2 and ds.n_items == 2


def test_movielens_bad_rating_names_line(tmp_path):
    with pytest.raises(ParseError) as err:
        parse_movielens(_write(tmp_path / "r.dat", "1::10::six::0\n"))
    assert err.value.line == 1
    assert "line 1" in str(err.value)


def test_movielens_csv(tmp_path):
    ds = parse_movielens(_write(tmp_path / "r.csv", "userId,movieId,rating,timestamp\n3,9,4.5,1\n2,9,1,1\n"),
                         format="csv")
    assert ds.user_ids.tolist() == [3, 2] and ds.item_ids.tolist() == [9]
    assert ds.ratings.tolist() == [4.5, 1.0]


def test_movielens_empty(tmp_path):
    with pytest.raises(ContractError):
        parse_movielens(_write(tmp_path / "r.dat", ""))


def test_movielens_first_seen_order(tmp_path):
    ds = parse_movielens(_write(tmp_path / "r.dat", "50::3::1::0\n20::4::2::0\n50::4::3::0\n"))
    assert ds.users.tolist() == [0, 1, 0]
    assert ds.user_ids[ds.users].tolist() == [50, 20, 50]
    assert ds.item_ids[ds.items].tolist() == [3, 4, 4]


@pytest.mark.parametrize("fmt", ["dat", "csv"])
@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 40), st.integers(1, 40), st.sampled_from([1.0, 2.5, 3.0, 4.0, 5.0])),
                min_size=1, max_size=50))
def test_movielens_roundtrip(tmp_path_factory, fmt, triples):
    path = tmp_path_factory.mktemp("ml") / f"r.{fmt}"
    path.write_text(("userId,movieId,rating,timestamp\n" if fmt == "csv" else "")
                    + "".join(f"{u}{'::' if fmt == 'dat' else ','}{i}{'::' if fmt == 'dat' else ','}{y}"
                              f"{'::' if fmt == 'dat' else ','}0\n" for u, i, y in triples))
    a = parse_movielens(path, fmt)
    write_movielens(a, path, fmt)
    b = parse_movielens(path, fmt)
    for f in ("users", "items", "ratings", "user_ids", "item_ids"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    # densified maps are bijections onto the original ids
    assert sorted(set(a.user_ids.tolist())) == sorted({u for u, _, _ in triples})
    assert len(set(a.user_ids.tolist())) == a.n_users


# ---------------------------------------------------------------------------
# bag of words


def test_bow_header_example(tmp_path):
    c = parse_bow(_write(tmp_path / "d.txt", "2\n3\n2\n1 1 4\n2 3 1\n"))
    assert len(c) == 2 and c.V == 3
    assert [x.tolist() for x in c.doc(0)] == [[0], [4.0]]
    assert [x.tolist() for x in c.doc(1)] == [[2], [1.0]]


def test_bow_nnz_mismatch(tmp_path):
    with pytest.raises(ParseError):
        parse_bow(_write(tmp_path / "d.txt", "2\n3\n3\n1 1 4\n2 3 1\n"))


@pytest.mark.parametrize("triple", ["3 1 1", "1 4 1", "1 1 0"])
def test_bow_bad_triples(tmp_path, triple):
    with pytest.raises(ParseError) as err:
        parse_bow(_write(tmp_path / "d.txt", f"2\n3\n1\n{triple}\n"))
    assert err.value.line == 4


def test_bow_duplicates_merge(tmp_path):
    c = parse_bow(_write(tmp_path / "d.txt", "1\n3\n3\n1 2 4\n1 2 1\n1 1 2\n"))
    assert c.doc(0)[0].tolist() == [0, 1] and c.doc(0)[1].tolist() == [2.0, 5.0]


def test_bow_vocab(tmp_path):
    d = _write(tmp_path / "d.txt", "1\n2\n1\n1 2 1\n")
    c = parse_bow(d, _write(tmp_path / "v.txt", "apple\nbanana\n"))
    assert c.vocab == ["apple", "banana"]
    with pytest.raises(ParseError):
        parse_bow(d, _write(tmp_path / "v2.txt", "apple\n"))


def test_bow_roundtrip(tmp_path):
    corpus, _ = gen_lda_synthetic(15, 30, 3, 12, seed=1)
    write_bow(corpus, tmp_path / "d.txt")
    back = parse_bow(tmp_path / "d.txt")
    for f in ("ids", "counts", "ptr"):
        assert np.array_equal(getattr(corpus, f), getattr(back, f))
    assert back.V == corpus.V


# ---------------------------------------------------------------------------
# numeric CSV


def test_numeric_csv(tmp_path):
    fm = parse_numeric_csv(_write(tmp_path / "x.csv", "a,b,c\n1,2,0\n3,4,1\n"), skip_header=True, label_column=2)
    assert fm.X.tolist() == [[1, 2], [3, 4]] and fm.labels.tolist() == [0, 1]


def test_numeric_csv_errors(tmp_path):
    with pytest.raises(ParseError):
        parse_numeric_csv(_write(tmp_path / "x.csv", "1,2\n3,x\n"))
    with pytest.raises(ParseError):
        parse_numeric_csv(_write(tmp_path / "y.csv", "1,2\n3\n"))


def test_standardized():
    fm = FeatureMatrix(np.random.default_rng(0).normal(5, 3, (100, 3))).standardized()
    np.testing.assert_allclose(fm.X.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(fm.X.std(axis=0), 1, atol=1e-12)


def test_feature_matrix_rejects_non_finite():
    with pytest.raises(ContractError):
        FeatureMatrix(np.array([[1.0, np.inf]]))


# ---------------------------------------------------------------------------
# generators


def test_gmm_generator_shape_and_determinism():
    a = gen_gmm_synthetic(250, seed=0)
    assert a.X.shape == (250, 2) and set(a.labels.tolist()) <= {0, 1, 2, 3}
    assert np.array_equal(a.X, gen_gmm_synthetic(250, seed=0).X)


def test_gmm_generator_cluster_means():
    fm = gen_gmm_synthetic(4000, seed=3)
    means = np.asarray(ClusterSpec().means)
    for k in range(4):
        pts = fm.X[fm.labels == k]
        assert np.all(np.abs(pts.mean(axis=0) - means[k]) < 3.0 / np.sqrt(len(pts)))


def test_gmm_generator_requires_n_ge_k():
    with pytest.raises(ContractError):
        gen_gmm_synthetic(3)


def test_ratings_full_grid():
    ds, _ = gen_ratings_synthetic(7, 5, 2, 1.0, 0.1, seed=0)
    assert ds.n_ratings == 35


def test_ratings_noiseless_unrounded():
    ds, (U, V) = gen_ratings_synthetic(6, 4, 3, 0.5, 0.0, seed=1, rounding=False)
    np.testing.assert_array_equal(ds.ratings, np.einsum("nd,nd->n", U[ds.users], V[ds.items]) + 3.0)


def test_ratings_mean():
    ds, _ = gen_ratings_synthetic(400, 250, 5, 1.0, 0.5, seed=2)
    assert ds.n_ratings == 100_000
    assert abs(ds.ratings.mean() - 3.0) < 0.05
    assert ds.ratings.min() >= 1 and ds.ratings.max() <= 5


def test_ratings_bad_density():
    with pytest.raises(ContractError):
        gen_ratings_synthetic(3, 3, 2, 0.0, 0.1)


def test_lda_generator_lengths_and_determinism():
    c, _ = gen_lda_synthetic(20, 30, 3, 17, seed=4)
    assert np.all(c.doc_lengths() == 17)
    c2, _ = gen_lda_synthetic(20, 30, 3, 17, seed=4)
    assert np.array_equal(c.ids, c2.ids) and np.array_equal(c.counts, c2.counts)


def test_lda_generator_single_topic_frequencies():
    c, topics = gen_lda_synthetic(400, 20, 1, 100, seed=5)
    freq = np.bincount(c.ids, weights=c.counts, minlength=20) / c.counts.sum()
    se = np.sqrt(topics[0] * (1 - topics[0]) / c.counts.sum())
    assert np.all(np.abs(freq - topics[0]) <= 4 * se + 1e-12)


def test_lda_generator_requires_v_ge_k():
    with pytest.raises(ContractError):
        gen_lda_synthetic(2, 2, 3, 5)
