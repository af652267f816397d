#!/usr/bin/env python3
"""Lexicon majority-vote baseline for datasets written by `emgf synth`.

Usage: lexicon_baseline.py DATA.jsonl [LEXICON.tsv]

The lexicon defaults to DATA.jsonl.lexicon.tsv. For each instance the opinion
words inside the smallest S phrase covering the aspect vote; ties and clauses
without opinion words predict neutral. Prints accuracy and per-class counts.
"""

import json
import re
import sys
from collections import Counter

LABELS = ["positive", "neutral", "negative"]


def parse_tree(text):
    """Returns (label, start, end, children) nodes; leaves are plain strings."""
    tokens = re.findall(r"\(|\)|[^\s()]+", text)
    pos = 0
    leaf = 0

    def node():
        nonlocal pos, leaf
        assert tokens[pos] == "("
        pos += 1
        label = ""
        if tokens[pos] not in "()":
            label = tokens[pos]
            pos += 1
        start = leaf
        children = []
        while tokens[pos] != ")":
            if tokens[pos] == "(":
                children.append(node())
            else:
                children.append(tokens[pos])
                pos += 1
                leaf += 1
        pos += 1
        return (label, start, leaf, children)

    return node()


def smallest_clause(tree, s, e):
    label, lo, hi, children = tree
    if s < lo or e > hi:
        return None
    for c in children:
        if isinstance(c, tuple):
            found = smallest_clause(c, s, e)
            if found:
                return found
    return (lo, hi) if label == "S" else None


def predict(record, lexicon):
    s, e = record["aspect"]
    lo, hi = smallest_clause(parse_tree(record["con_tree"]), s, e) or (0, len(record["tokens"]))
    votes = Counter(lexicon[t] for t in record["tokens"][lo:hi] if t in lexicon)
    if not votes:
        return "neutral"
    ranked = votes.most_common()
    if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
        return "neutral"
    return ranked[0][0]


def main(argv):
    if len(argv) not in (2, 3):
        print(__doc__.strip(), file=sys.stderr)
        return 1
    data_path = argv[1]
    lex_path = argv[2] if len(argv) == 3 else data_path + ".lexicon.tsv"
    with open(lex_path) as f:
        lexicon = dict(line.rstrip("\n").split("\t") for line in f if line.strip())
    correct = 0
    total = 0
    confusion = Counter()
    with open(data_path) as f:
        for line in f:
            if not line.strip():
                continue
            record = json.loads(line)
            pred = predict(record, lexicon)
            confusion[(record["polarity"], pred)] += 1
            correct += pred == record["polarity"]
            total += 1
    print(f"instances\t{total}")
    print(f"accuracy\t{correct / total:.6f}")
    for gold in LABELS:
        row = "\t".join(str(confusion[(gold, p)]) for p in LABELS)
        print(f"{gold}\t{row}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
