import random
from decimal import Decimal

import pytest
from hypothesis import given, settings, strategies as st

from recstore import Engine, Message, open_record_store
from recstore.indexes.text import (
    BunchedPostings,
    DefaultTokenizer,
    DuplicatePosting,
    NGramTokenizer,
    TokenizerVersionMismatch,
    decode_bunch,
    encode_bunch,
    format_kb,
    get_tokenizer,
    space_model,
)
from recstore.metadata import FieldDescriptor as F, MetaDataBuilder
from recstore.predicates import TextMode
from recstore.subspace import Subspace

from oracles import near_match, phrase_match, simple_tokens, text_oracle

LOC = Subspace(("txt",))
VOCAB = "the quick brown fox jumps over lazy dog and cat runs far away home".split()


def text_meta(bunch_size=20, tokenizer="default", **options):
    b = MetaDataBuilder()
    b.add_record_type("Doc", [F("id", 1, "int64"), F("body", 2, "text")], "field('id')")
    b.add_index("body", "TEXT", "field('body')", ["Doc"], bunch_size=bunch_size, tokenizer=tokenizer, **options)
    return b.build()


def random_text(rng, n=None):
    return " ".join(rng.choice(VOCAB) for _ in range(n or rng.randint(1, 12)))


def bunched(engine, bunch_size):
    return BunchedPostings(engine.begin(), Subspace(("bp",)), bunch_size)


def entry_layout(m):
    return [(tok, [pk for pk, _ in postings]) for tok, postings, _, _ in m.entries()]


def test_bunch_codec_round_trip():
    postings = [((1,), [0, 4, 9]), ((2, "x"), [3]), ((7,), [1, 2])]
    assert decode_bunch((1,), encode_bunch(postings)) == postings
    assert encode_bunch([((5,), [2, 3])]).hex() == "020201"  # count, first, delta
    with pytest.raises(ValueError):
        encode_bunch([((1,), [3, 3])])


def test_sequential_inserts_fill_bunches(engine):
    m = bunched(engine, 2)
    for pk in (1, 2, 3):
        m.insert("t", (pk,), [0])
    assert entry_layout(m) == [("t", [(1,), (2,)]), ("t", [(3,)])]


def test_insert_into_full_bunch_evicts_greatest_and_merges(engine):
    m = bunched(engine, 3)
    for pk in (10, 20, 30, 40):
        m.insert("t", (pk,), [0])
    assert entry_layout(m) == [("t", [(10,), (20,), (30,)]), ("t", [(40,)])]
    m.insert("t", (15,), [0])  # 30 is evicted and joins 40's bunch
    assert entry_layout(m) == [("t", [(10,), (15,), (20,)]), ("t", [(30,), (40,)])]
    m.insert("t", (5,), [0])  # before a full first bunch: stands alone
    assert entry_layout(m)[0] == ("t", [(5,)])
    m.insert("t", (1,), [0])  # before a bunch with room: merged into one entry
    assert entry_layout(m)[0] == ("t", [(1,), (5,)])
    assert len(entry_layout(m)) == 3
    with pytest.raises(DuplicatePosting):
        m.insert("t", (15,), [1])


def test_delete_rekeys_and_never_merges(engine):
    m = bunched(engine, 3)
    for pk in (1, 2, 3, 4):
        m.insert("t", (pk,), [0])
    assert m.delete("t", (1,))
    assert entry_layout(m) == [("t", [(2,), (3,)]), ("t", [(4,)])]
    assert m.delete("t", (3,)) and not m.delete("t", (3,))
    assert entry_layout(m) == [("t", [(2,)]), ("t", [(4,)])]
    assert m.compact() == 1
    assert entry_layout(m) == [("t", [(2,), (4,)])]


def test_operation_cost_bounds(engine):
    rng = random.Random(2)
    m = bunched(engine, 4)
    live = set()
    for _ in range(3000):
        pk = (rng.randrange(300),)
        before = m.counters.snapshot()
        if pk in live:
            m.delete("t", pk)
            live.discard(pk)
            reads, writes, clears = (a - b for a, b in zip(m.counters.snapshot(), before))
            assert reads <= 1 and writes <= 1 and clears <= 1
        else:
            m.insert("t", pk, [1])
            live.add(pk)
            reads, writes, clears = (a - b for a, b in zip(m.counters.snapshot(), before))
            assert reads <= 2 and writes <= 2 and clears <= 1
    assert {pk for pk in m.flatten()["t"]} == live


@pytest.mark.parametrize("bunch_size", [1, 2, 3, 20])
def test_postings_match_oracle_after_random_edits(bunch_size):
    engine = Engine()
    meta = text_meta(bunch_size)
    rng = random.Random(bunch_size)
    docs = {}
    for _ in range(40):
        def batch(t):
            s = open_record_store(t, LOC, meta)
            for _ in range(rng.randint(1, 6)):
                i = rng.randrange(60)
                if (i,) in docs and rng.random() < 0.3:
                    s.delete_record((i,))
                    del docs[(i,)]
                else:
                    docs[(i,)] = random_text(rng)
                    s.save_record(Message("Doc", id=i, body=docs[(i,)]))

        engine.run(batch)
    store = open_record_store(engine.begin(), LOC, meta)
    m = store.maintainer("body").map
    assert m.flatten() == text_oracle(docs)
    for token, pks in text_oracle(docs).items():
        n = sum(1 for tok, _, _, _ in m.entries() if tok == token)
        assert -(-len(pks) // bunch_size) <= n <= len(pks)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.booleans()), max_size=40), st.integers(1, 5))
def test_bunched_map_property(ops, bunch_size):
    m = BunchedPostings(Engine().begin(), Subspace(("p",)), bunch_size)
    model = {}
    for pk, insert in ops:
        if insert and pk not in model:
            m.insert("w", (pk,), [pk])
            model[pk] = [pk]
        elif not insert:
            assert m.delete("w", (pk,)) == (pk in model)
            model.pop(pk, None)
    assert m.flatten().get("w", {}) == {(k,): v for k, v in model.items()}


@pytest.fixture(scope="module")
def corpus_store():
    engine = Engine()
    meta = text_meta(3)
    rng = random.Random(9)
    docs = {(i,): random_text(rng, rng.randint(3, 25)) for i in range(150)}

    def fill(t):
        s = open_record_store(t, LOC, meta)
        for (i,), body in docs.items():
            s.save_record(Message("Doc", id=i, body=body))

    engine.run(fill)
    return open_record_store(engine.begin(), LOC, meta), docs


def _hits(store, mode, words, window=0):
    return {pk for pk, _ in store.maintainer("body").search(mode, words, window)}


@pytest.mark.parametrize("words", [["fox"], ["lazy", "dog"], ["the", "the"], ["cat", "zebra"]])
def test_token_and_all_queries(corpus_store, words):
    store, docs = corpus_store
    expected = {pk for pk, body in docs.items() if all(w in simple_tokens(body) for w in words)}
    assert _hits(store, TextMode.ALL, words) == expected


@pytest.mark.parametrize("phrase", ["quick brown", "the the", "dog and cat", "fox"])
def test_phrase_queries(corpus_store, phrase):
    store, docs = corpus_store
    words = phrase.split()
    assert _hits(store, TextMode.PHRASE, words) == {pk for pk, b in docs.items() if phrase_match(b, words)}


@pytest.mark.parametrize("words,window", [(["fox", "dog"], 2), (["cat", "home"], 5), (["far", "away", "the"], 3)])
def test_proximity_queries(corpus_store, words, window):
    store, docs = corpus_store
    expected = {pk for pk, b in docs.items() if near_match(b, words, window)}
    assert _hits(store, TextMode.PROXIMITY, words, window) == expected


def test_prefix_queries(corpus_store):
    store, docs = corpus_store
    expected = {pk for pk, b in docs.items() if any(w.startswith("ca") or w.startswith("ju") for w in simple_tokens(b))}
    assert _hits(store, TextMode.PREFIX, ["ca", "ju"]) == expected


def test_update_rewrites_only_changed_tokens(engine):
    meta = text_meta(4)
    engine.run(lambda t: open_record_store(t, LOC, meta).save_record(Message("Doc", id=1, body="a b c")))
    t = engine.begin()
    s = open_record_store(t, LOC, meta)
    m = s.maintainer("body").map
    s.save_record(Message("Doc", id=1, body="a c b d"))
    assert m.flatten() == {"a": {(1,): [0]}, "b": {(1,): [2]}, "c": {(1,): [1]}, "d": {(1,): [3]}}
    assert m.counters.writes == 3  # b and c moved, d is new, a untouched


def test_tokenizers():
    assert DefaultTokenizer().tokenize("Hello, World! x_y") == [("hello", 0), ("world", 1), ("x", 2), ("y", 3)]
    assert get_tokenizer("whitespace").tokenize("A b") == [("A", 0), ("b", 1)]
    assert NGramTokenizer(3).tokenize("abcd ef") == [("abc", 0), ("bcd", 1), ("ef", 5)]
    with pytest.raises(ValueError):
        get_tokenizer("klingon")


def test_ngram_entries_equal_sum_of_gram_counts(engine):
    rng = random.Random(5)
    letters = "abcdefghijklmnopqrstuvwxyz"
    words = ["".join(rng.sample(letters, rng.randint(3, 12))) for _ in range(100)]
    meta = text_meta(1, "ngram3")

    def fill(t):
        s = open_record_store(t, LOC, meta)
        for i, w in enumerate(words):
            s.save_record(Message("Doc", id=i, body=w))

    engine.run(fill)
    stats = open_record_store(engine.begin(), LOC, meta).maintainer("body").stats()
    assert stats.entries == sum(len(w) - 2 for w in words)


def test_ngram_phrase_matches_substrings(engine):
    meta = text_meta(2, "ngram3")

    def fill(t):
        s = open_record_store(t, LOC, meta)
        for i, body in enumerate(["recordstore", "cordial", "record store"]):
            s.save_record(Message("Doc", id=i, body=body))

    engine.run(fill)
    m = open_record_store(engine.begin(), LOC, meta).maintainer("body")
    grams = NGramTokenizer(3).grams("dsto")
    assert {pk for pk, _ in m.search(TextMode.PHRASE, grams)} == {(0,)}
    assert {pk for pk, _ in m.search(TextMode.PHRASE, NGramTokenizer(3).grams("cord"))} == {(0,), (1,), (2,)}


def test_tokenizer_version_guard(engine):
    meta = text_meta(tokenizer_version=2)
    with pytest.raises(TokenizerVersionMismatch):
        engine.run(lambda t: open_record_store(t, LOC, meta).save_record(Message("Doc", id=1, body="x")))


def test_space_model_figures():
    m = space_model()
    assert m["key_size"] == Decimal("22.8")
    assert m["entry_size_unbunched"] == Decimal("25.8")
    assert m["entry_size_bunched"] == Decimal("119.8")
    assert format_kb(m["doc_bytes_unbunched"]) == "11.1 kB"
    assert format_kb(m["doc_bytes_bunched"]) == "2.6 kB"
