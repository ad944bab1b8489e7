import random
import struct

import numpy as np
import pytest

from predaspect.corpus import Dataset, Instance, Token, join_index, parse_conllu_lines
from predaspect.embeddings import from_pairs

FIGURE_CONLLU = """# newdoc id = d1
# sent_id = s1
# text = Jane decided to leave early
1\tJane\tJane\tPROPN\tNNP\t_\t2\tnsubj\t_\t_
2\tdecided\tdecide\tVERB\tVBD\t_\t0\troot\t_\t_
3\tto\tto\tPART\tTO\t_\t4\taux\t_\t_
4\tleave\tleave\tVERB\tVB\t_\t2\txcomp\t_\t_
5\tearly\tearly\tADV\tRB\t_\t4\tadvmod\t_\t_

"""

FIGURE_ROW = {
    "doc_id": "d1", "sent_id": "s1", "target_index": "1",
    "label": "event", "verb_lemma": "decide", "split": "",
}


def write_w2v_fixture(path, entries, newline=True):
    """Independent writer for the word2vec binary layout (struct, not numpy)."""
    dim = len(entries[0][1])
    with open(path, "wb") as fh:
        fh.write(f"{len(entries)} {dim}\n".encode("ascii"))
        for word, vec in entries:
            fh.write(word.encode("utf-8") + b" ")
            fh.write(struct.pack(f"<{dim}f", *vec))
            if newline:
                fh.write(b"\n")


@pytest.fixture
def figure_dataset():
    sents = parse_conllu_lines(FIGURE_CONLLU.splitlines(True))
    return join_index(sents, [FIGURE_ROW], "figure", ["state", "event"])


@pytest.fixture
def figure_instance(figure_dataset):
    return figure_dataset.instances[0]


@pytest.fixture
def figure_table():
    return from_pairs([
        ("jane", [1.0, 0.0, 0.5]),
        ("decided", [0.25, 2.0, -1.0]),
        ("to", [0.0, -0.5, 0.125]),
        ("leave", [3.0, 1.0, 1.0]),
        ("early", [-1.0, -1.0, -1.0]),
    ])


def make_instance(doc, sent, target, label, lemma, forms=None, pos=None, split=None):
    forms = forms or ["w0", "w1", "w2"]
    pos = pos or ["NN"] * len(forms)
    root = min(target, len(forms) - 1)
    tokens = tuple(
        Token(i, f, p, None if i == root else root, "root" if i == root else "dep")
        for i, (f, p) in enumerate(zip(forms, pos))
    )
    return Instance(doc, sent, tokens, target, label, lemma, split)


def synthetic_corpus(n_docs=6, per_doc=6, seed=0, dim=4, vocab_size=30, labels=("state", "event"), split=False):
    """Toy corpus whose label is learnable from the verb form, plus its CoNLL-U,
    index rows and embedding pairs."""
    rng = random.Random(seed)
    vocab = [f"w{i}" for i in range(vocab_size)]
    verbs = {"know": labels[0], "run": labels[1], "see": None, "hold": None}
    lines, rows = [], []
    sid = 0
    for d in range(n_docs):
        lines.append(f"# newdoc id = doc{d}")
        for _ in range(per_doc):
            sid += 1
            n = rng.randint(3, 9)
            target = rng.randrange(n)
            verb = rng.choice(sorted(verbs))
            label = verbs[verb] or rng.choice(labels)
            forms = [rng.choice(vocab) for _ in range(n)]
            forms[target] = verb.capitalize() if rng.random() < 0.3 else verb
            lines.append(f"# sent_id = s{sid}")
            for i, form in enumerate(forms):
                head = 0 if i == target else target + 1
                tag = "VBD" if i == target else rng.choice(["DT", "IN", "NN", "JJ", "RP", "PRP"])
                lines.append(f"{i + 1}\t{form}\t{form.lower()}\tX\t{tag}\t_\t{head}\t{'root' if head == 0 else 'dep'}\t_\t_")
            lines.append("")
            split_tag = ("train" if d < n_docs - 2 else "test") if split else ""
            rows.append({
                "doc_id": f"doc{d}", "sent_id": f"s{sid}", "target_index": str(target),
                "label": label, "verb_lemma": verb, "split": split_tag,
            })
    nrng = np.random.default_rng(seed)
    pairs = [(w, nrng.normal(size=dim).round(3).tolist()) for w in vocab]
    pairs += [(v, nrng.normal(size=dim).round(3).tolist()) for v in sorted(verbs)]
    return "\n".join(lines) + "\n", rows, pairs


def write_corpus(tmp_path, split=False, n_docs=6, per_doc=6, seed=0):
    conllu, rows, pairs = synthetic_corpus(n_docs=n_docs, per_doc=per_doc, seed=seed, split=split)
    (tmp_path / "corpus.conllu").write_text(conllu, encoding="utf-8")
    cols = ["doc_id", "sent_id", "target_index", "label", "verb_lemma", "split"]
    text = "\t".join(cols) + "\n" + "".join("\t".join(r[c] for c in cols) + "\n" for r in rows)
    (tmp_path / "index.tsv").write_text(text, encoding="utf-8")
    write_w2v_fixture(tmp_path / "vectors.bin", pairs)
    return {
        "conllu": str(tmp_path / "corpus.conllu"),
        "index": str(tmp_path / "index.tsv"),
        "embeddings": str(tmp_path / "vectors.bin"),
    }


@pytest.fixture
def corpus_files(tmp_path):
    return write_corpus(tmp_path)


@pytest.fixture
def toy_dataset():
    conllu, rows, pairs = synthetic_corpus()
    sents = parse_conllu_lines(conllu.splitlines(True))
    return join_index(sents, rows, "toy", ["state", "event"]), from_pairs(pairs)


def label_dataset(labels, lemmas=None, docs=None, splits=None, label_set=None):
    """Token-free dataset for label-level tests."""
    n = len(labels)
    lemmas = lemmas or ["v"] * n
    docs = docs or [f"d{i}" for i in range(n)]
    splits = splits or [None] * n
    insts = tuple(
        make_instance(docs[i], f"s{i}", 0, labels[i], lemmas[i], split=splits[i]) for i in range(n)
    )
    return Dataset("labels", tuple(label_set or sorted(set(labels))), insts)


# one (number, title, passed) entry per acceptance criterion, filled by test_acceptance
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}")
