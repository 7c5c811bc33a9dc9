"""Regenerates the synthetic annotated course document used by the tests.

Run from this directory: python3 generate.py
"""

import csv
import json
import math

PAGE_W, PAGE_H = 612.0, 792.0
LEFT, RIGHT = 72.0, 540.0
TOP, BOTTOM = 60.0, 740.0
LINE = 12.0
WORDS_PER_LINE = 14
HEIGHT = {1: 24.0, 2: 16.0}

POOLS = {
    0: [
        "A relation is a set of tuples that share the same attributes.",
        "Every table should have a primary key that identifies each row uniquely.",
        "Foreign keys reference the primary key of another table and keep data consistent.",
        "Normalization removes redundancy by splitting tables along functional dependencies.",
        "The second normal form forbids partial dependencies on a composite key.",
        "Attributes hold atomic values drawn from a declared domain.",
    ],
    1: [
        "A SELECT statement names the columns to return and the tables to read.",
        "The WHERE clause filters rows before any grouping takes place.",
        "An inner join keeps only the row pairs whose join condition holds.",
        "Outer joins also keep unmatched rows and fill the missing side with NULL.",
        "GROUP BY collapses rows with equal keys so aggregates can summarise them.",
        "HAVING filters groups after aggregation, unlike WHERE which filters rows.",
    ],
    2: [
        "A transaction groups several operations into one logical unit of work.",
        "Atomicity means that either every operation of a transaction takes effect or none does.",
        "Durability guarantees that committed changes survive a crash.",
        "Isolation levels trade consistency for concurrency between parallel transactions.",
        "Under serializable isolation the outcome equals some serial order of the transactions.",
        "Dirty reads happen when a transaction sees uncommitted changes of another.",
    ],
    -1: [
        "Office hours take place on Tuesdays in room 204.",
        "Please submit exercises through the course portal before Friday noon.",
    ],
}


def prose(topic, words, salt):
    pool = POOLS[topic]
    out, i = [], salt
    while len(out) < words:
        out.extend(pool[i % len(pool)].split())
        i += 3 if len(pool) > 3 else 1
    return " ".join(out[:words])


# (kind, payload, topic, unit-major). "break" forces a new page.
H, P, L, BREAK = "heading", "text", "list", "break"
CONTENT = [
    (H, (1, "1 Relational Data"), 0, 1),
    (P, 70, 0, 1),
    (H, (2, "1.1 Tables and Keys"), 0, 1),
    (P, 120, 0, 1),
    (P, 90, 0, 1),
    (H, (2, "1.2 Normal Forms"), 0, 1),
    (P, 110, 0, 1),
    (P, 40, 0, 1),
    (L, 30, 0, 1),
    (L, 28, 0, 1),
    (BREAK,),
    (L, 32, 0, 1),
    (L, 26, 0, 1),
    (P, 60, 0, 1),
    (H, (1, "2 Querying with SQL"), 1, 2),
    (P, 80, 1, 2),
    (H, (2, "2.1 Selection and Projection"), 1, 2),
    (P, 150, 1, 2),
    (P, 140, 1, 2),
    (BREAK,),
    (H, (2, "2.2 Joins"), 1, 3),
    (P, 160, 1, 3),
    (P, 150, 1, 3),
    (P, 120, 1, 3),
    (H, (2, "2.3 Aggregation"), 1, 4),
    (P, 140, 1, 4),
    (BREAK,),
    (P, 130, 1, 4),
    (H, (2, "2.4 Summary"), 1, 4),
    (P, 18, 1, 4),
    (H, (1, "3 Transactions"), 2, 5),
    (P, 70, 2, 5),
    (H, (2, "3.1 ACID Properties"), 2, 5),
    (P, 130, 2, 5),
    (BREAK,),
    (H, (2, "3.2 Isolation Levels"), 2, 5),
    (P, 140, 2, 5),
    (P, 100, 2, 5),
    (H, (1, "Course Information"), -1, 6),
    (P, 24, -1, 6),
]


def box(x0, y0, x1, y1):
    return [round(x0, 2), round(y0, 2), round(x1, 2), round(y1, 2)]


def build():
    blocks, instances, annotations = [], [], []
    page, y = 1, TOP
    minor = {}
    furniture_pages = set()

    def emit(page, bb, text, kind, topic, major, level):
        bid = f"b{len(blocks):03d}"
        blocks.append({"id": bid, "page": page, "bbox": bb, "text": text, "order": len(blocks)})
        pad = 1.5
        instances.append(
            {
                "page": page,
                "bbox": box(bb[0] - pad, bb[1] - pad, bb[2] + pad, bb[3] + pad),
                "label": kind,
                "confidence": 0.9,
            }
        )
        if kind in ("header", "footer"):
            label = "0.0"
        else:
            # Consecutive list blocks form one unit, everything else its own.
            body = [a for a in annotations if a["type"] not in ("header", "footer")]
            same_run = kind == "list" and body and body[-1]["type"] == "list"
            if not same_run:
                minor[major] = minor.get(major, 0) + 1
            label = f"{major}.{minor[major]}"
        annotations.append(
            {
                "block_id": bid,
                "type": kind,
                "topic": topic,
                "chunk": label,
                "heading_level": "none" if level is None else f"H{level}",
            }
        )

    def furniture(page):
        if page in furniture_pages:
            return
        furniture_pages.add(page)
        emit(page, box(LEFT, 30, RIGHT, 42), "Databases - Course Notes", "header", -1, 0, None)

    def footer(page):
        emit(page, box(LEFT, 752, RIGHT, 764), f"Page {page}", "footer", -1, 0, None)

    furniture(page)
    salt = 0
    for item in CONTENT:
        if item[0] == BREAK:
            footer(page)
            page, y = page + 1, TOP
            furniture(page)
            continue
        kind, payload, topic, major = item
        if kind == H:
            level, text = payload
            h = HEIGHT[level]
        else:
            salt += 1
            text = prose(topic, payload, salt)
            if kind == L:
                text = "- " + text
            h = math.ceil(payload / WORDS_PER_LINE) * LINE
            level = None
        assert y + h <= BOTTOM, f"page {page} overflows at {text[:30]!r}"
        emit(page, box(LEFT, y, RIGHT, y + h), text, kind, topic, major, level)
        y += h + 6
    footer(page)
    return blocks, instances, annotations


TOPICS = [
    {
        "index": 0,
        "title": "Relational data modelling",
        "objectives": [
            "Explain relations, attributes and keys",
            "Apply normal forms to remove redundancy",
        ],
    },
    {
        "index": 1,
        "title": "Querying with SQL",
        "objectives": [
            "Write selection and projection queries",
            "Combine tables with joins",
            "Summarise data with grouping and aggregates",
        ],
    },
    {
        "index": 2,
        "title": "Transactions",
        "objectives": [
            "Describe the ACID properties",
            "Compare isolation levels and their anomalies",
        ],
    },
]

GRADING = [
    ("Mohler", "What is a pointer?", "A variable that stores a memory address.", "It holds an address.", "4", ""),
    ("Mohler", "What is a stack?", "A LIFO data structure.", "A queue.", "1.5", "5"),
    ("CU-NLP", "", "Water boils at 100 degrees Celsius at sea level.", "At 100 C.", "1", ""),
    ("CU-NLP", "", "The heart pumps blood.", "It beats.", "0.25", ""),
    ("Beetle", "Why does the bulb light?", "It is in a closed path with the battery.", "Closed circuit.", "correct", ""),
    ("Beetle", "What happens if the switch opens?", "The circuit is broken and the bulb goes out.", "It dims.", "contradictory", ""),
    ("SciEntsBank", "What is erosion?", "Wearing away of rock by water or wind.", "Rock wears away.", "partially_correct_incomplete", ""),
    ("SAF", "What does TCP guarantee?", "Reliable in-order delivery.", "Ordering and reliability.", "1", ""),
    ("SAF", "What is a socket?", "An endpoint for communication.", "A plug.", "3", "3.5"),
    ("Stita", "Name a sorting algorithm.", "Quicksort.", "Bubble sort.", "3", "4"),
    ("DigiKlausur", "What is a perceptron?", "A linear binary classifier.", "A neuron model.", "0.5", "1"),
]


def main():
    blocks, instances, annotations = build()
    with open("blocks.jsonl", "w") as f:
        for b in blocks:
            f.write(json.dumps(b) + "\n")
    with open("instances.jsonl", "w") as f:
        for i in instances:
            f.write(json.dumps(i) + "\n")
    with open("annotations.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["block_id", "type", "topic", "chunk", "heading_level"])
        w.writeheader()
        w.writerows(annotations)
    with open("topics.json", "w") as f:
        json.dump(TOPICS, f, indent=2)
        f.write("\n")
    with open("grading.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["dataset", "question", "reference_answer", "provided_answer", "grade_raw", "grade_scale_max"])
        w.writerows(GRADING)
    print(f"{len(blocks)} blocks on {blocks[-1]['page']} pages")


if __name__ == "__main__":
    main()
