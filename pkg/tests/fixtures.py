"""Shared record fixtures with hand-computed expectations."""
from recstore import Message
from recstore import expressions as kx
from recstore.expressions import FanType

SAMPLE = Message(
    "Sample",
    id=1066,
    parent=Message("Parent", a=1415, b="child"),
    elem=["first", "second", "third"],
)

# (expression, expected tuples, expected packed hex per tuple).  The hex was
# worked out by hand from the type codes: 0x16 = two-byte positive int,
# 0x02 = string, 0x05 = nested.
KEY_EXPRESSION_FIXTURES = [
    ("field", kx.field("id"), [(1066,)], ["16042a"]),
    ("nest", kx.field("parent").nest("a"), [(1415,)], ["160587"]),
    (
        "fanout",
        kx.field("elem", FanType.FAN_OUT),
        [("first",), ("second",), ("third",)],
        ["02666972737400", "027365636f6e6400", "02746869726400"],
    ),
    (
        "concatenate",
        kx.field("elem", FanType.CONCATENATE),
        [(["first", "second", "third"],)],
        ["0502666972737400027365636f6e6400027468697264" + "0000"],
    ),
    (
        "concat",
        kx.concat(kx.field("id"), kx.field("parent").nest("b")),
        [(1066, "child")],
        ["16042a" + "026368696c6400"],
    ),
]


# -- schema evolution ----------------------------------------------------------

import copy  # noqa: E402
from dataclasses import replace  # noqa: E402

from recstore.metadata import FieldDescriptor as F, MetaDataBuilder  # noqa: E402


def base_schema() -> dict:
    return {
        "messages": {"Address": [F("city", 1, "text"), F("zip", 2, "text")]},
        "types": {
            "Customer": (
                [F("id", 1, "int64"), F("name", 2, "text"), F("address", 3, "message", message_type="Address"),
                 F("tags", 4, "text", True)],
                "field('id')",
            ),
            "Order": ([F("id", 1, "int64"), F("customer_id", 2, "int64"), F("total", 3, "int64")], "field('id')"),
        },
        "indexes": [
            ("by_name", "VALUE", "field('name')", ["Customer"]),
            ("order_total", "SUM", "group_by(field('total'), by=field('customer_id'))", ["Order"]),
        ],
    }


def build_schema(schema: dict, previous=None, version=None, check=True):
    b = MetaDataBuilder(previous, version)
    for name, fields in schema["messages"].items():
        b.add_message(name, fields)
    for name, (fields, pk) in schema["types"].items():
        b.add_record_type(name, fields, pk)
    for name, kind, expr, types in schema["indexes"]:
        b.add_index(name, kind, expr, types)
    return b.build(check=check)


def _edit(fn):
    schema = copy.deepcopy(base_schema())
    fn(schema)
    return schema


def _replace_field(fields, name, new):
    return [new if f.name == name else f for f in fields]


def evolution_fixtures():
    """``(base, accepted, rejected)``; rejected items carry the expected violation code."""
    base = build_schema(base_schema())
    cust = lambda s: s["types"]["Customer"][0]  # noqa: E731

    def set_cust(s, fields):
        s["types"]["Customer"] = (fields, s["types"]["Customer"][1])

    accepted = [
        ("add-field", _edit(lambda s: cust(s).append(F("email", 5, "text")))),
        ("add-type", _edit(lambda s: s["types"].update(Invoice=([F("id", 1, "int64"), F("amount", 2, "int64")], "field('id')")))),
        ("add-index", _edit(lambda s: s["indexes"].append(("by_city", "VALUE", "field('address').nest('city')", ["Customer"])))),
        ("add-nested-field", _edit(lambda s: s["messages"]["Address"].append(F("country", 3, "text")))),
        ("add-repeated-field", _edit(lambda s: cust(s).append(F("phones", 6, "text", True)))),
        ("remove-field-reserved", _edit(lambda s: set_cust(s, [f for f in cust(s) if f.name != "tags"]))),
        ("drop-index", _edit(lambda s: s["indexes"].pop(0))),
        ("add-type-and-index", _edit(lambda s: (
            s["types"].update(Invoice=([F("id", 1, "int64"), F("amount", 2, "int64")], "field('id')")),
            s["indexes"].append(("invoice_amount", "VALUE", "field('amount')", ["Invoice"])),
        ))),
        ("redefine-index", _edit(lambda s: s["indexes"].__setitem__(0, ("by_name", "VALUE", "concat(field('name'), field('id'))", ["Customer"])))),
    ]
    accepted = [(name, build_schema(schema, base)) for name, schema in accepted]

    rejected = []

    def reject(name, code, schema=None, meta=None, old=base):
        if meta is None:
            meta = build_schema(schema, old, check=False)
        rejected.append((name, old, meta, code))

    reject("number-reuse", "field-number-reuse",
           _edit(lambda s: set_cust(s, _replace_field(cust(s), "tags", F("score", 4, "int64")))))
    dropped = build_schema(_edit(lambda s: set_cust(s, [f for f in cust(s) if f.name != "tags"])), base)
    reject("reserved-number-reuse", "field-number-reuse",
           _edit(lambda s: set_cust(s, _replace_field(cust(s), "tags", F("score", 4, "int64")))), old=dropped)
    reject("type-change", "field-type-change",
           _edit(lambda s: set_cust(s, _replace_field(cust(s), "name", F("name", 2, "bytes")))))
    reject("nested-type-change", "field-type-change",
           _edit(lambda s: s["messages"].__setitem__("Address", [F("city", 1, "text"), F("zip", 2, "int64")])))
    reject("label-change", "field-label-change",
           _edit(lambda s: set_cust(s, _replace_field(cust(s), "tags", F("tags", 4, "text")))))
    reject("pk-change", "primary-key-change",
           _edit(lambda s: s["types"].__setitem__("Order", (s["types"]["Order"][0], "concat(field('customer_id'), field('id'))"))))
    reject("type-removed", "record-type-removed",
           _edit(lambda s: (s["types"].pop("Order"), s["indexes"].pop(1))))
    reject("version-not-increased", "version-not-increased", meta=build_schema(base_schema(), version=base.version))
    changed = replace(base.index("by_name"), key_expression=kx.parse("concat(field('name'), field('id'))"))
    reject("index-changed-in-place", "index-changed",
           meta=replace(base, version=base.version + 1, indexes=(changed, base.index("order_total"))))
    reject("index-dropped-without-former", "index-removed-without-former",
           meta=replace(base, version=base.version + 1, indexes=(base.index("order_total"),)))
    return base, accepted, rejected


BASE_EVOLUTION_META = build_schema(base_schema())


# -- a schema exercising every index type ---------------------------------------

WORDS = (
    "alpha beta gamma delta epsilon zeta eta theta iota kappa lambda mu nu xi omicron pi rho sigma tau "
    "upsilon phi chi psi omega apple apricot banana band bandana"
).split()
OWNERS = ["ann", "bob", "cy", None]
MIXED_TYPES = ("Doc", "Note", "Event")


def mixed_metadata():
    pk = "concat(record_type(), field('id'))"
    b = MetaDataBuilder()
    b.add_record_type(
        "Doc",
        [F("id", 1, "int64"), F("owner", 2, "text"), F("amount", 3, "int64"), F("tags", 4, "text", True),
         F("body", 5, "text")],
        pk,
    )
    b.add_record_type("Note", [F("id", 1, "int64"), F("owner", 2, "text"), F("amount", 3, "int64")], pk)
    b.add_record_type("Event", [F("id", 1, "int64"), F("owner", 2, "text"), F("score", 3, "int64")], pk)
    b.add_index("by_owner", "VALUE", "field('owner')", ["Doc", "Note"])
    b.add_index("by_tag", "VALUE", "fanout(field('tags'))", ["Doc"])
    b.add_index("owner_amount", "VALUE", "concat(field('owner'), field('amount'))", ["Doc"])
    b.add_index("count_by_owner", "COUNT", "field('owner')", ["Doc", "Note", "Event"])
    b.add_index("amount_non_null", "COUNT_NON_NULL", "group_by(field('amount'), by=field('owner'))", ["Doc", "Note"])
    b.add_index("amount_sum", "SUM", "group_by(field('amount'), by=field('owner'))", ["Doc", "Note"])
    b.add_index("amount_min", "MIN_EVER", "group_by(field('amount'))", ["Doc"])
    b.add_index("amount_max", "MAX_EVER", "group_by(field('amount'), by=field('owner'))", ["Doc"])
    b.add_index("event_saves", "COUNT_UPDATES", "field('owner')", ["Event"])
    b.add_index("versions", "VERSION", "version()", ["Doc", "Note", "Event"])
    b.add_index("score_rank", "RANK", "group_by(field('score'), by=field('owner'))", ["Event"])
    b.add_index("body_text", "TEXT", "field('body')", ["Doc"], bunch_size=4)
    return b.build()


def random_mixed_record(rng, type_name: str, rid: int):
    owner = rng.choice(OWNERS)
    if type_name == "Doc":
        return Message(
            "Doc",
            id=rid,
            owner=owner,
            amount=rng.choice([None, rng.randrange(-50, 100)]),
            tags=rng.sample(WORDS[:8], rng.randrange(4)),
            body=rng.choice([None, " ".join(rng.choice(WORDS) for _ in range(rng.randrange(1, 12)))]),
        )
    if type_name == "Note":
        return Message("Note", id=rid, owner=owner, amount=rng.choice([None, rng.randrange(-50, 100)]))
    return Message("Event", id=rid, owner=owner, score=rng.choice([None, rng.randrange(0, 40)]))


# -- query cases: (name, query text, oracle over [(pk, record)] in pk order, ordered) --


def _where(types, pred):
    return lambda rows: [pk for pk, r in rows if r.type_name in types and pred(r)]


def _gt(v, bound):
    return v is not None and v > bound


def _by_owner_order(rows):
    picked = [(pk, r) for pk, r in rows if r.type_name in ("Doc", "Note")]
    # unset owners sort first; ties break on primary key
    return [pk for pk, r in sorted(picked, key=lambda x: (x[1].get("owner") is not None, x[1].get("owner") or "", x[0]))]


def _top_scores(owner, n):
    def oracle(rows):
        # a missing score is ranked too, ahead of every number
        evs = [(r.get("score") is not None, r.get("score") or 0, pk)
               for pk, r in rows if r.type_name == "Event" and r.get("owner") == owner]
        return [pk for _, _, pk in sorted(evs)[:n]]

    return oracle


def _phrase(words):
    def has(r):
        toks = (r.get("body") or "").lower().split()
        return any(toks[i : i + len(words)] == words for i in range(len(toks) - len(words) + 1))

    return has


QUERY_CASES = [
    ("owner-eq", "FROM Doc, Note WHERE owner = \"ann\"", _where({"Doc", "Note"}, lambda r: r.get("owner") == "ann"), False),
    ("owner-and-amount", "FROM Doc WHERE owner = \"bob\" AND amount > 10",
     _where({"Doc"}, lambda r: r.get("owner") == "bob" and _gt(r.get("amount"), 10)), False),
    ("amount-range", "FROM Doc WHERE owner = \"cy\" AND amount >= 0 AND amount < 50",
     _where({"Doc"}, lambda r: r.get("owner") == "cy" and r.get("amount") is not None and 0 <= r["amount"] < 50), False),
    ("any-tag", "FROM Doc WHERE ANY tags = \"delta\"", _where({"Doc"}, lambda r: "delta" in r.get("tags", [])), False),
    ("two-tags", "FROM Doc WHERE ANY tags = \"alpha\" AND ANY tags = \"beta\"",
     _where({"Doc"}, lambda r: {"alpha", "beta"} <= set(r.get("tags", []))), False),
    ("unindexed", "FROM Note WHERE amount < 0", _where({"Note"}, lambda r: r.get("amount") is not None and r["amount"] < 0), False),
    ("either-owner", "FROM Doc, Note WHERE owner = \"ann\" OR owner = \"cy\"",
     _where({"Doc", "Note"}, lambda r: r.get("owner") in ("ann", "cy")), False),
    ("owner-null", "FROM Doc, Note WHERE owner IS NULL", _where({"Doc", "Note"}, lambda r: r.get("owner") is None), False),
    ("not-owner", "FROM Note WHERE NOT owner = \"ann\"",
     _where({"Note"}, lambda r: r.get("owner") is not None and r["owner"] != "ann"), False),
    ("prefix", "FROM Doc, Note WHERE owner STARTS_WITH \"b\"",
     _where({"Doc", "Note"}, lambda r: (r.get("owner") or "").startswith("b")), False),
    ("phrase", "FROM Doc WHERE body CONTAINS_PHRASE \"alpha beta\"", _where({"Doc"}, _phrase(["alpha", "beta"])), False),
    ("text-and-owner", "FROM Doc WHERE body CONTAINS \"gamma\" AND owner = \"ann\"",
     _where({"Doc"}, lambda r: "gamma" in (r.get("body") or "").split() and r.get("owner") == "ann"), False),
    ("top-scores", "FROM Event WHERE RANK(group_by(field(\"score\"), by=field(\"owner\"))) < 3 AND owner = \"ann\"",
     _top_scores("ann", 3), True),
    ("all-docs", "FROM Doc", _where({"Doc"}, lambda r: True), True),
    ("sorted-by-owner", "FROM Doc, Note ORDER BY owner", _by_owner_order, True),
]


def filled_mixed_store(n_records: int, seed: int = 0):
    """An engine holding ``n_records`` random mixed records; returns (engine, metadata, location)."""
    import random

    from recstore import Engine, open_record_store
    from recstore.subspace import Subspace

    meta = mixed_metadata()
    loc = Subspace(("q",))
    engine = Engine()
    rng = random.Random(seed)
    ids = list(range(n_records))
    for start in range(0, n_records, 250):
        def fill(t, chunk=ids[start : start + 250]):
            s = open_record_store(t, loc, meta)
            for i in chunk:
                s.save_record(random_mixed_record(rng, rng.choice(MIXED_TYPES), i))

        engine.run(fill)
    return engine, meta, loc


def random_query_text(rng) -> str:
    """A random query over the mixed schema, built from atoms valid for every chosen type."""
    types = rng.choice([["Doc"], ["Note"], ["Doc", "Note"], ["Event"]])
    atoms = [lambda: f'owner = "{rng.choice(OWNERS[:3])}"', lambda: "owner IS NULL"]
    if types == ["Event"]:
        atoms.append(lambda: f"score {rng.choice(['<', '>=', '='])} {rng.randrange(40)}")
    else:
        atoms.append(lambda: f"amount {rng.choice(['<', '<=', '>', '>=', '='])} {rng.randrange(-50, 100)}")
    if types == ["Doc"]:
        atoms += [
            lambda: f'ANY tags = "{rng.choice(WORDS[:8])}"',
            lambda: f'body CONTAINS "{rng.choice(WORDS)}"',
            lambda: f'body CONTAINS_ALL "{rng.choice(WORDS)} {rng.choice(WORDS)}"',
        ]

    def pred(depth):
        roll = rng.random()
        if depth == 0 or roll < 0.4:
            return rng.choice(atoms)()
        if roll < 0.5:
            return f"NOT ({pred(depth - 1)})"
        op = "AND" if roll < 0.75 else "OR"
        return f"({pred(depth - 1)}) {op} ({pred(depth - 1)})"

    text = f"FROM {', '.join(types)}"
    if rng.random() < 0.9:
        text += f" WHERE {pred(2)}"
    if "Event" not in types and rng.random() < 0.25:
        text += " ORDER BY owner" + rng.choice(["", " DESC"])
    return text
