"""Dataset containers, file parsers/writers and seeded synthetic generators."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError


@dataclass(frozen=True, eq=False)
class RatingsDataset:
    """Dense re-indexed ``(user, item, rating)`` triples.

    ``user_ids[u]`` / ``item_ids[i]`` recover the original ids.
    """

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    user_ids: np.ndarray
    item_ids: np.ndarray

    @property
    def n_users(self):
        return len(self.user_ids)

    @property
    def n_items(self):
        return len(self.item_ids)

    @property
    def n_ratings(self):
        return len(self.ratings)

    def __len__(self):
        return self.n_ratings

    def subset(self, idx):
        return RatingsDataset(
            self.users[idx], self.items[idx], self.ratings[idx], self.user_ids, self.item_ids
        )


@dataclass(frozen=True, eq=False)
class BowCorpus:
    """Bag-of-words corpus in CSR form: doc ``d`` owns ``ids/counts[ptr[d]:ptr[d+1]]``."""

    ids: np.ndarray
    counts: np.ndarray
    ptr: np.ndarray
    V: int
    vocab: list[str] | None = None

    def __len__(self):
        return len(self.ptr) - 1

    @property
    def n_docs(self):
        return len(self)

    def doc(self, d):
        lo, hi = self.ptr[d], self.ptr[d + 1]
        return self.ids[lo:hi], self.counts[lo:hi]

    def doc_lengths(self):
        return np.add.reduceat(self.counts, self.ptr[:-1]) if len(self.counts) else np.zeros(len(self))

    def subset(self, docs):
        docs = np.asarray(docs)
        parts = [self.doc(d) for d in docs]
        return from_docs([p[0] for p in parts], [p[1] for p in parts], self.V, self.vocab)


def from_docs(doc_ids, doc_counts, V, vocab=None) -> BowCorpus:
    lens = [len(i) for i in doc_ids]
    ptr = np.zeros(len(lens) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum(lens)
    ids = np.concatenate(doc_ids).astype(np.int64) if lens else np.zeros(0, np.int64)
    cts = np.concatenate(doc_counts).astype(float) if lens else np.zeros(0)
    return BowCorpus(ids, cts, ptr, int(V), vocab)


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    X: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.X)):
            raise ContractError("feature matrix has non-finite entries")

    def __len__(self):
        return len(self.X)

    def standardized(self):
        sd = self.X.std(axis=0)
        sd[sd == 0] = 1.0
        return FeatureMatrix((self.X - self.X.mean(axis=0)) / sd, self.labels)


# ---------------------------------------------------------------------------
# MovieLens


def _densify(raw):
    index = {}
    out = np.empty(len(raw), dtype=np.int64)
    for n, key in enumerate(raw):
        out[n] = index.setdefault(key, len(index))
    return out, np.array(list(index), dtype=np.int64)


def parse_movielens(path, format="dat") -> RatingsDataset:
    """Read ``user::item::rating::timestamp`` (``dat``) or
    ``userId,movieId,rating,timestamp`` with a header (``csv``)."""
    path = Path(path)
    users, items, ratings = [], [], []
    with open(path, newline="") as fh:
        if format == "dat":
            rows = ((n, line.rstrip("\r\n").split("::")) for n, line in enumerate(fh, 1))
        elif format == "csv":
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise ContractError(f"{path}: empty ratings file")
            rows = ((n, r) for n, r in enumerate(reader, 2))
        else:
            raise ContractError(f"unknown MovieLens format {format!r}")
        for n, parts in rows:
            if not parts or parts == [""]:
                continue
            if len(parts) < 3:
                raise ParseError(f"expected at least 3 fields, got {len(parts)}", n, path)
            try:
                u, i, y = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError as exc:
                raise ParseError(str(exc), n, path) from None
            users.append(u)
            items.append(i)
            ratings.append(y)
    if not ratings:
        raise ContractError(f"{path}: no ratings")
    u, uids = _densify(users)
    i, iids = _densify(items)
    return RatingsDataset(u, i, np.array(ratings), uids, iids)


def write_movielens(ds: RatingsDataset, path, format="dat"):
    with open(path, "w", newline="") as fh:
        if format == "csv":
            fh.write("userId,movieId,rating,timestamp\n")
        sep = "::" if format == "dat" else ","
        for u, i, y in zip(ds.users, ds.items, ds.ratings):
            fh.write(f"{ds.user_ids[u]}{sep}{ds.item_ids[i]}{sep}{float(y)!r}{sep}0\n")


# ---------------------------------------------------------------------------
# UCI bag of words


def parse_bow(docword_path, vocab_path=None) -> BowCorpus:
    """Read a UCI ``docword`` file (header ``D``, ``W``, ``NNZ``, then 1-based
    ``doc word count`` triples).  Duplicate ``(doc, word)`` pairs are summed."""
    path = Path(docword_path)
    with open(path) as fh:
        lines = [(n, ln.strip()) for n, ln in enumerate(fh, 1)]
    lines = [(n, ln) for n, ln in lines if ln]
    if len(lines) < 3:
        raise ParseError("missing D/W/NNZ header", None, path)
    try:
        D, W, NNZ = (int(lines[k][1]) for k in range(3))
    except ValueError as exc:
        raise ParseError(f"bad header: {exc}", None, path) from None
    triples = lines[3:]
    if len(triples) != NNZ:
        raise ParseError(f"header says NNZ={NNZ} but found {len(triples)} triples", None, path)
    docs = [dict() for _ in range(D)]
    for n, ln in triples:
        parts = ln.split()
        if len(parts) != 3:
            raise ParseError("expected 'docId wordId count'", n, path)
        try:
            d, w, c = (int(p) for p in parts)
        except ValueError as exc:
            raise ParseError(str(exc), n, path) from None
        if not (1 <= d <= D and 1 <= w <= W):
            raise ParseError(f"id out of range (doc {d}, word {w})", n, path)
        if c < 1:
            raise ParseError(f"count must be >= 1, got {c}", n, path)
        docs[d - 1][w - 1] = docs[d - 1].get(w - 1, 0) + c
    vocab = None
    if vocab_path is not None:
        with open(vocab_path) as fh:
            vocab = [ln.rstrip("\r\n") for ln in fh if ln.strip()]
        if len(vocab) != W:
            raise ParseError(f"vocabulary has {len(vocab)} tokens, header says W={W}", None, vocab_path)
    ids = [np.array(sorted(doc), dtype=np.int64) for doc in docs]
    cts = [np.array([doc[w] for w in sorted(doc)], dtype=float) for doc in docs]
    return from_docs(ids, cts, W, vocab)


def write_bow(corpus: BowCorpus, docword_path, vocab_path=None):
    with open(docword_path, "w") as fh:
        fh.write(f"{len(corpus)}\n{corpus.V}\n{len(corpus.ids)}\n")
        for d in range(len(corpus)):
            ids, cts = corpus.doc(d)
            for w, c in zip(ids, cts):
                fh.write(f"{d + 1} {w + 1} {int(c)}\n")
    if vocab_path is not None and corpus.vocab is not None:
        with open(vocab_path, "w") as fh:
            fh.write("".join(f"{tok}\n" for tok in corpus.vocab))


# ---------------------------------------------------------------------------
# numeric CSV


def parse_numeric_csv(path, skip_header=False, label_column=None) -> FeatureMatrix:
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for n, row in enumerate(reader, 1):
            if n == 1 and skip_header:
                continue
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ParseError(str(exc), n, path) from None
    if not rows:
        raise ContractError(f"{path}: no rows")
    if len({len(r) for r in rows}) != 1:
        raise ParseError("rows have differing numbers of columns", None, path)
    A = np.array(rows)
    labels = None
    if label_column is not None:
        labels = A[:, label_column]
        A = np.delete(A, label_column, axis=1)
    return FeatureMatrix(A, labels)


# ---------------------------------------------------------------------------
# synthetic generators


@dataclass(frozen=True)
class ClusterSpec:
    means: tuple = ((3.0, 3.0), (3.0, -3.0), (-3.0, 3.0), (-3.0, -3.0))
    weights: tuple | None = None
    scale: float = 1.0

    @property
    def K(self):
        return len(self.means)


def gen_gmm_synthetic(n: int, spec: ClusterSpec = ClusterSpec(), seed: int = 0) -> FeatureMatrix:
    """Gaussian clusters with isotropic covariance ``scale**2 I``; labels attached."""
    if n < spec.K:
        raise ContractError(f"need n >= K={spec.K}")
    rng = np.random.default_rng(seed)
    means = np.asarray(spec.means, dtype=float)
    w = np.full(spec.K, 1.0 / spec.K) if spec.weights is None else np.asarray(spec.weights, float)
    counts = rng.multinomial(n, w / w.sum())
    labels = np.repeat(np.arange(spec.K), counts)
    X = means[labels] + spec.scale * rng.standard_normal((n, means.shape[1]))
    perm = rng.permutation(n)
    return FeatureMatrix(X[perm], labels[perm])


def gen_ratings_synthetic(
    n_users, n_items, d, density, sigma2, seed=0, rounding=True
):
    """Ratings ``clip(round(u.v + 3 + noise), 1, 5)`` on a random observed set.

    Returns ``(dataset, (U, V))`` with the true factors.
    """
    if not 0 < density <= 1:
        raise ContractError("density must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    U = rng.normal(0.0, 1.0 / np.sqrt(d), size=(n_users, d))
    V = rng.normal(0.0, 1.0 / np.sqrt(d), size=(n_items, d))
    total = n_users * n_items
    if density == 1:
        flat = np.arange(total)
    else:
        flat = np.sort(rng.choice(total, size=max(1, int(round(density * total))), replace=False))
    users, items = np.divmod(flat, n_items)
    y = np.einsum("nd,nd->n", U[users], V[items]) + 3.0
    if sigma2 > 0:
        y = y + rng.normal(0.0, np.sqrt(sigma2), size=len(y))
    if rounding:
        y = np.clip(np.round(y), 1, 5)
    ds = RatingsDataset(users, items, y, np.arange(n_users), np.arange(n_items))
    return ds, (U, V)


def gen_lda_synthetic(D, V, K, doc_len, seed=0, topic_conc=0.1, doc_conc=0.5):
    """Corpus from the LDA generative process; returns ``(corpus, topics)``."""
    if V < K:
        raise ContractError("need V >= K")
    rng = np.random.default_rng(seed)
    topics = rng.dirichlet(np.full(V, topic_conc), size=K)
    ids, cts = [], []
    for _ in range(D):
        theta = rng.dirichlet(np.full(K, doc_conc))
        word_probs = theta @ topics
        counts = rng.multinomial(doc_len, word_probs / word_probs.sum())
        nz = np.flatnonzero(counts)
        ids.append(nz)
        cts.append(counts[nz].astype(float))
    return from_docs(ids, cts, V), topics
