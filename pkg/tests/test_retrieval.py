import math

import pytest

from persona_search.context import Query
from persona_search.exceptions import CorpusError
from persona_search.personas import Persona
from persona_search.retrieval import Document, Index, LocalRetriever, index_corpus, load_corpus, write_corpus

P_SOFT = Persona("p00", "librarian", "programming", "lookup", "software")


def _bm25_oracle(docs, query, k1=1.2, b=0.75):
    toks = [d.text.lower().split() for d in docs]
    n = len(docs)
    avgdl = sum(map(len, toks)) / n
    out = {}
    for d, t in zip(docs, toks):
        s = 0.0
        for q in set(query.lower().split()):
            df = sum(q in tt for tt in toks)
            if not df or q not in t:
                continue
            idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
            tf = t.count(q)
            s += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(t) / avgdl))
        if s:
            out[d.doc_id] = s
    return out


def test_postings_per_distinct_token():
    docs = [Document("a", "one two three four"), Document("b", "five six seven"), Document("c", "eight nine ten")]
    idx = index_corpus(docs)
    assert idx.stats()["n_terms"] == 10


def test_duplicate_id_rejected():
    with pytest.raises(CorpusError):
        index_corpus([Document("a", "x"), Document("a", "y")])


def test_reindex_identical_stats(tmp_path):
    docs = [Document("a", "red fish"), Document("b", "blue fish fish")]
    assert index_corpus(docs).stats() == index_corpus(docs).stats()
    write_corpus(docs, tmp_path / "c.jsonl")
    assert index_corpus(load_corpus(tmp_path / "c.jsonl")).stats() == index_corpus(docs).stats()


def test_scores_match_oracle():
    docs = [
        Document("a", "red fish swim fast"),
        Document("b", "blue fish fish"),
        Document("c", "red car"),
        Document("d", "green tree grows tall slowly"),
    ]
    got = Index(docs).score(Query("q", "red fish").tokens)
    want = _bm25_oracle(docs, "red fish")
    assert got.keys() == want.keys()
    for k in want:
        assert got[k] == pytest.approx(want[k], rel=1e-12)


def test_no_overlap_gives_nothing():
    r = LocalRetriever(Index([Document("a", "red fish")]))
    assert r.retrieve(Query("q", "quantum"), P_SOFT) == []


def test_domain_boost_doubles_identical_text():
    docs = [
        Document("x", "rust parser", "medicine"),
        Document("y", "rust parser", "software"),
        Document("z", "unrelated words here", "finance"),
    ]
    idx = Index(docs)
    base = idx.score(["rust", "parser"])
    got = LocalRetriever(idx, domain_boost=1.5).retrieve(Query("q", "rust parser"), P_SOFT)
    assert [d.doc_id for d in got] == ["y", "x"]
    assert got[0].score == pytest.approx(1.5 * base["y"])
    assert got[1].score == pytest.approx(base["x"])


def test_unit_boost_is_persona_free():
    docs = [Document("x", "rust parser", "medicine"), Document("y", "rust parser tool", "software")]
    idx = Index(docs)
    got = LocalRetriever(idx, domain_boost=1.0).retrieve(Query("q", "rust parser"), P_SOFT)
    plain = sorted(idx.score(["rust", "parser"]).items(), key=lambda kv: (-kv[1], kv[0]))
    assert [d.doc_id for d in got] == [k for k, _ in plain]


def test_corpus_grade_bounds(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"doc_id": "a", "text": "x", "intent_grades": {"i": 9}}\n')
    with pytest.raises(CorpusError):
        load_corpus(p)
