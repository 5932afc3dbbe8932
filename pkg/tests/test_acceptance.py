"""Acceptance criteria at full scale; the terminal summary prints one verdict per criterion."""
import io
import random
import threading

import pytest

from recstore import Engine, Message, open_record_store, tuples
from recstore.cli import main as cli_main
from recstore.cursors import ScanLimits
from recstore.indexes.base import IndexState
from recstore.indexes.rank import RankedSet
from recstore.indexes.text import BunchedPostings, NGramTokenizer
from recstore.metadata import validate_evolution
from recstore.query import parse_query
from recstore.subspace import Subspace

from fixtures import (
    KEY_EXPRESSION_FIXTURES,
    QUERY_CASES,
    SAMPLE,
    filled_mixed_store,
    mixed_metadata,
    random_query_text,
)
from oracles import (
    check_serializable,
    check_tuple_pairs,
    index_discrepancies,
    rank_oracle,
    run_kv_workload,
    run_mixed_workload,
    run_online_build,
)
from test_indexes import sale, sales_meta
from test_rank import six_element_set
from test_text import text_meta
from test_tuples import load_vectors

DATA = __import__("pathlib").Path(__file__).parent / "data"


@pytest.mark.criterion(1, "serializability oracle, 8 workers x 2,000 transactions over 200 keys")
def test_serializable_history():
    engine, attempts = run_kv_workload(n_workers=8, n_txns=2000, n_keys=200, seed=1)
    assert engine.commit_count == 2000
    assert check_serializable(engine, attempts, 200) == []
    assert any(a.version is None for a in attempts)  # the workload really did contend


@pytest.mark.criterion(2, "100 concurrent COUNT/SUM saves commit with no aborts")
def test_atomic_aggregates_do_not_conflict():
    engine = Engine()
    meta = sales_meta()
    loc = Subspace(("acc2",))
    engine.run(lambda t: open_record_store(t, loc, meta))
    rng = random.Random(2)
    amounts = [rng.randrange(-1000, 1000) for _ in range(100)]
    txns = [engine.begin() for _ in amounts]
    for i, (t, a) in enumerate(zip(txns, amounts)):
        open_record_store(t, loc, meta).save_record(sale(i, "eu", a))
    for t in txns:
        t.commit()
    assert engine.conflict_count == 0
    store = open_record_store(engine.begin(), loc, meta)
    assert store.maintainer("n").get() == 100
    assert store.maintainer("total").get(("eu",)) == sum(amounts)


@pytest.mark.criterion(3, "5,000 mixed ops: every readable index equals recomputation")
def test_index_oracle_equivalence():
    engine = Engine()
    meta = mixed_metadata()
    loc = Subspace(("acc3",))
    model = run_mixed_workload(engine, loc, meta, 5000, seed=3)
    store = open_record_store(engine.begin(), loc, meta)
    assert all(store.index_state(ix.name) is IndexState.READABLE for ix in meta.indexes)
    assert index_discrepancies(store, model) == []


@pytest.mark.criterion(4, "five key-expression fixtures, byte exact")
def test_key_expression_fixtures():
    assert len(KEY_EXPRESSION_FIXTURES) == 5
    for _, expr, expected, hexes in KEY_EXPRESSION_FIXTURES:
        got = expr.evaluate(SAMPLE)
        assert got == expected
        assert [tuples.pack(t).hex() for t in got] == hexes


@pytest.mark.criterion(5, "six-element skip list ranks e at 4; 10,000 element sort-oracle round trips")
def test_rank_reproduction():
    t = Engine().begin()
    rs = six_element_set(t)
    for c in "fbdaec":
        rs.insert((c,))
    assert rs.rank_of(("e",)) == 4

    # spread over several transactions, each well inside the time budget
    engine = Engine()
    sub = Subspace(("acc5",))
    rng = random.Random(5)
    values = set()
    while len(values) < 10_000:
        values.add((rng.randrange(10**9),))
    pending = list(values)
    for start in range(0, len(pending), 2_000):
        engine.run(lambda t, chunk=pending[start : start + 2_000]: [RankedSet(t, sub, levels=6).insert(v) for v in chunk])
    ordered = rank_oracle(values)
    for start in range(0, len(ordered), 2_000):
        def check(t, start=start):
            big = RankedSet(t, sub, levels=6)
            for i in range(start, min(start + 2_000, len(ordered))):
                assert big.rank_of(ordered[i]) == i
                assert big.value_at_rank(i) == ordered[i]

        engine.run(check)
    t = engine.begin()
    assert RankedSet(t, sub, levels=6).value_at_rank(len(ordered)) is None
    assert RankedSet(t, sub, levels=6).check() == []


def _corpus_stats(tmp_path, bunch):
    schema = tmp_path / f"pages{bunch}.yaml"
    schema.write_text(
        "version: 1\n"
        "record_types:\n"
        "  Page:\n"
        '    primary_key: field("id")\n'
        "    fields:\n"
        "      - {name: id, number: 1, type: int64}\n"
        "      - {name: body, number: 2, type: text}\n"
        "indexes:\n"
        f'  - {{name: body_text, type: text, key: field("body"), on: [Page], options: {{bunch_size: {bunch}}}}}\n'
    )
    engine = Engine()

    def run(*argv):
        out = io.StringIO()
        assert cli_main(list(argv), out, engine) == 0
        return dict(line.split("=", 1) for line in out.getvalue().splitlines())

    run("--schema", str(schema), "init")
    run("ingest", str(DATA / "kjv_1mb.txt.gz"), "--type", "Page", "--text-field", "body", "--batch", "20")
    return run("stats", "text", "body_text")


@pytest.mark.criterion(6, "text space model figures; measured corpus shrinks at least 3x with bunching")
def test_text_space_model_and_corpus(tmp_path):
    out = io.StringIO()
    assert cli_main(["stats", "text", "--model", "prefix=10", "token=7.8", "pk=3", "overhead=2", "bunch=20"], out) == 0
    model = dict(line.split("=", 1) for line in out.getvalue().splitlines())
    assert (model["entry_bytes_unbunched"], model["entry_bytes_bunched"]) == ("25.8", "119.8")
    assert (model["doc_size_unbunched"], model["doc_size_bunched"]) == ("11.1kB", "2.6kB")

    single, bunched = _corpus_stats(tmp_path, 1), _corpus_stats(tmp_path, 20)
    print(f"kjv entries: bunch 1 = {single['entries']}, bunch 20 = {bunched['entries']}, "
          f"avg fill = {bunched['avg_bunch_fill']}")
    assert int(single["entries"]) >= 3 * int(bunched["entries"])


@pytest.mark.criterion(7, "50,000 postings ops stay within the read and write bounds")
def test_text_cost_bounds():
    rng = random.Random(7)
    engine = Engine()
    sub = Subspace(("acc7",))
    tokens = [f"t{i}" for i in range(8)]
    live = {t: set() for t in tokens}
    worst = {"insert": [0, 0, 0], "delete": [0, 0, 0]}
    for step in range(50_000):
        if step % 2_500 == 0:
            if step:
                txn.commit()
            txn = engine.begin()
            m = BunchedPostings(txn, sub, 20)
        tok = rng.choice(tokens)
        pk = (rng.randrange(2_000),)
        before = m.counters.snapshot()
        if pk in live[tok]:
            m.delete(tok, pk)
            live[tok].discard(pk)
            kind = "delete"
        else:
            m.insert(tok, pk, [rng.randrange(100)])
            live[tok].add(pk)
            kind = "insert"
        cost = [a - b for a, b in zip(m.counters.snapshot(), before)]
        worst[kind] = [max(w, c) for w, c in zip(worst[kind], cost)]
    print(f"worst (reads, writes, clears): {worst}")
    assert worst["insert"][0] <= 2 and worst["insert"][1] <= 2 and worst["insert"][2] <= 1
    assert worst["delete"][0] <= 1 and worst["delete"][1] <= 1 and worst["delete"][2] <= 1
    assert {t: set(p) for t, p in m.flatten().items()} == {t: p for t, p in live.items() if p}


@pytest.mark.criterion(8, "trigram index over 1,000 tokens has one entry per gram")
def test_ngram_linearity():
    rng = random.Random(8)
    letters = "abcdefghijklmnopqrstuvwxyz"
    words = ["".join(rng.sample(letters, rng.randint(3, 20))) for _ in range(1000)]
    engine = Engine()
    meta = text_meta(1, "ngram3")
    loc = Subspace(("acc8",))
    for start in range(0, len(words), 250):
        def fill(t, start=start):
            s = open_record_store(t, loc, meta)
            for i in range(start, start + 250):
                s.save_record(Message("Doc", id=i, body=words[i]))

        engine.run(fill)
    stats = open_record_store(engine.begin(), loc, meta).maintainer("body").stats()
    assert stats.entries == sum(len(w) - 2 for w in words)
    assert sum(len(NGramTokenizer(3).grams(w)) for w in words) == stats.entries


@pytest.mark.criterion(9, "VERSION index order equals commit order over 1,000 saves in 400 transactions")
def test_version_order():
    engine = Engine()
    meta = mixed_metadata()
    loc = Subspace(("acc9",))
    engine.run(lambda t: open_record_store(t, loc, meta))
    rng = random.Random(9)
    sizes = [1] * 400
    for _ in range(600):
        sizes[rng.randrange(400)] += 1
    batches, next_id = [], 0
    for n in sizes:
        batches.append(list(range(next_id, next_id + n)))
        next_id += n
    committed = []
    lock = threading.Lock()

    def worker(mine):
        for ids in mine:
            def save(t, ids=ids):
                s = open_record_store(t, loc, meta)
                for i in ids:
                    s.save_record(Message("Note", id=i, owner=rng.choice(["a", "b"])))
                return t

            t = engine.run(save)
            with lock:
                committed.append((t.committed_version, ids))

    threads = [threading.Thread(target=worker, args=(batches[w::4],)) for w in range(4)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    expected = [i for _, ids in sorted(committed) for i in ids]
    entries = open_record_store(engine.begin(), loc, meta).maintainer("versions").scan()
    assert len(entries) == 1000
    assert [e.primary_key[1] for e in entries] == expected
    by_commit = {}
    for e in entries:
        by_commit.setdefault(e.key[0].tr_version, []).append(e.key[0].user_version)
    assert all(v == list(range(len(v))) for v in by_commit.values())


@pytest.mark.criterion(10, "online build over 20,000 records with 4 writers: no early reads, final index exact")
def test_online_build_under_load():
    outcome = run_online_build(20_000, 200, 4, seed=10)
    print(f"reads served: {outcome.successful_reads}, refused: {outcome.refused_reads}, "
          f"writer commits: {outcome.writer_commits}")
    assert outcome.reads_before_readable == 0
    assert outcome.refused_after_readable == 0
    assert outcome.problems == []
    assert all(r.final_state is IndexState.READABLE for r in outcome.report)


def _pages(engine, loc, meta, query, limit):
    # every page in its own transaction, resumed from the previous continuation
    got, cont = [], None
    while True:
        store = open_record_store(engine.begin(), loc, meta)
        page = store.execute_query(query, cont, ScanLimits(limit=limit))
        assert len(page.items) <= limit
        got += [r.primary_key for r in page.items]
        cont = page.continuation
        if cont is None:
            return got


@pytest.mark.criterion(11, "paging with limits 1, 2, 3, 7 reproduces every unpaged result")
def test_continuation_paging():
    engine, meta, loc = filled_mixed_store(1000, seed=11)
    rng = random.Random(11)
    texts = [text for _, text, _, _ in QUERY_CASES] + [random_query_text(rng) for _ in range(60)]
    rows = [(r.primary_key, r.record) for r in open_record_store(engine.begin(), loc, meta).all_records()]
    for text in texts:
        query = parse_query(text)
        full = [r.primary_key for r in open_record_store(engine.begin(), loc, meta).execute_query(query).items]
        if query.filter is not None and "RANK(" not in text:
            expected = {pk for pk, r in rows if r.type_name in query.record_types and query.filter.evaluate(r) is True}
            assert set(full) == expected and len(full) == len(expected), text
        for limit in (1, 2, 3, 7):
            assert _pages(engine, loc, meta, query, limit) == full, (text, limit)


@pytest.mark.criterion(12, "100,000 tuple pairs keep order and round trip; golden vectors byte exact")
def test_tuple_encoding():
    assert check_tuple_pairs(tuples.pack, tuples.unpack, 100_000, seed=12) == []
    vectors = load_vectors()
    assert vectors
    for value, encoded in vectors:
        assert tuples.pack(value) == encoded
        assert tuples.pack(tuples.unpack(encoded)) == encoded


@pytest.mark.criterion(13, "schema evolution suites: compatible changes accepted, breaking ones rejected")
def test_schema_evolution():
    from fixtures import evolution_fixtures

    base, accepted, rejected = evolution_fixtures()
    assert {name for name, _ in accepted} >= {"add-field", "add-type", "add-index"}
    assert {name for name, *_ in rejected} >= {"number-reuse", "type-change", "pk-change"}
    for name, meta in accepted:
        assert validate_evolution(base, meta) == [], name
    for name, old, meta, code in rejected:
        assert code in [v.code for v in validate_evolution(old, meta)], name
