"""Builder for the frozen synthetic training task.

A 30-entity graph of 20 people, four two-valued attribute relations, and two
distractor relations with single shared objects. At a uniform generator the
distractor hop is the likelier walk (one object instead of two), so untrained
answers are wrong; training on selected candidates flips the relation weights
and the answers. The byte output of these builders is frozen as the fixture
files under tests/data/synthetic and must never drift.
"""

from __future__ import annotations

import json

PERSON_COUNT = 20

# relation -> (object pool, question paraphrases)
GOLD_RELATIONS: dict[str, tuple[tuple[str, str], tuple[str, str]]] = {
    "favorite_color": (
        ("crimson", "teal"),
        ("What is the favorite color of {p}?", "Which color does {p} like most?"),
    ),
    "home_city": (
        ("Lisbon", "Osaka"),
        ("What is the home city of {p}?", "Which city does {p} live in?"),
    ),
    "field_of_study": (
        ("botany", "geology"),
        ("What is the field of study of {p}?", "Which subject does {p} study?"),
    ),
    "spoken_language": (
        ("Basque", "Quechua"),
        ("What language does {p} speak?", "Which language is spoken by {p}?"),
    ),
}

# distractors: one shared object each, so a uniform walker prefers them
JUNK_RELATIONS: dict[str, str] = {
    "storage_shelf": "shelf_a",
    "queue_slot": "slot_9",
}


def person_label(i: int) -> str:
    return f"person_{i:02d}"


def _person_relation(i: int) -> str:
    names = list(GOLD_RELATIONS)
    return names[(i - 1) % len(names)]


def synthetic_graph_text() -> str:
    """TSV triples: per person, both attribute values plus both distractors."""
    lines = []
    for i in range(1, PERSON_COUNT + 1):
        person = person_label(i)
        relation = _person_relation(i)
        pool, _ = GOLD_RELATIONS[relation]
        for value in pool:
            lines.append(f"{person}\t{relation}\t{value}")
        for junk_rel, junk_obj in JUNK_RELATIONS.items():
            lines.append(f"{person}\t{junk_rel}\t{junk_obj}")
    return "\n".join(lines) + "\n"


def synthetic_dataset_text() -> str:
    """JSON-lines questions: two paraphrases per person, gold = the value pool."""
    records = []
    qid = 0
    for i in range(1, PERSON_COUNT + 1):
        person = person_label(i)
        relation = _person_relation(i)
        pool, templates = GOLD_RELATIONS[relation]
        for template in templates:
            qid += 1
            records.append(
                {
                    "id": f"q{qid:03d}",
                    "question": template.format(p=person),
                    "q_entities": [person],
                    "answers": list(pool),
                }
            )
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
