"""Smoke test for the Python bindings.

Build and install first:
    pip install maturin
    maturin develop -m crates/python/Cargo.toml
"""

import math
import os
import tempfile

import memcause


def main():
    corpus = memcause.Corpus.synthetic(20, seed=7)
    assert len(corpus) == 20
    assert memcause.Corpus.from_jsonl(corpus.to_jsonl()).doc_ids() == corpus.doc_ids()
    train, test = corpus.split(0.9, seed=7)
    assert (len(train), len(test)) == (18, 2)

    model, losses = memcause.Model.train(train, kind="convms", hops=1, dim=8, epochs=200, seed=7)
    assert len(losses) == 200 and losses[-1] < losses[0]
    scores = model.evaluate(test)
    assert scores["clause"]["f1"] == 1.0, scores

    doc = test.doc_ids()[0]
    pred = model.predict(test, doc)
    windows, weights = model.attention(test, doc, pred["chosen"])
    assert len(windows) == len(test.clauses(doc)[pred["chosen"]])
    assert all(abs(sum(row) - 1.0) < 1e-9 for row in weights)

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.bin")
        model.save(path)
        again = memcause.Model.load(path)
        assert again.predict(test, doc) == pred

    assert abs(sum(memcause.softmax([1.0, 2.0, 3.0])) - 1.0) < 1e-12
    p, r, f = memcause.prf(1, 1, 2)
    assert (p, r) == (1.0, 0.5) and math.isclose(f, 2 / 3)
    report = memcause.gradient_check("convms", hops=3, dim=4, clause_len=5)
    assert report["passed"], report

    try:
        model.predict(test, "no-such-doc")
    except KeyError:
        pass
    else:
        raise AssertionError("unknown document accepted")

    print(f"ok: {model!r}, held-out F {scores['clause']['f1']:.4f}")


if __name__ == "__main__":
    main()
