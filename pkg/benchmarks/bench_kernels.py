"""Compare the compiled and pure-Python kernels on BM25 scoring and sentence BLEU.

Usage: python3 benchmarks/bench_kernels.py [--docs 20000] [--queries 200] [--pairs 2000]
"""

import argparse
import random
import time

from docrefine import _pykernels, kernels
from docrefine.evaluation import BM25Index
from docrefine.metrics import _encode_pair

try:
    from docrefine import _ckernels
except ImportError:
    _ckernels = None


def _corpus(rng, n_docs, vocab_size=5000):
    vocab = [f"term{i}" for i in range(vocab_size)]
    weights = [1.0 / (i + 1) for i in range(vocab_size)]  # Zipf-ish
    docs = [" ".join(rng.choices(vocab, weights, k=rng.randint(20, 120))) for _ in range(n_docs)]
    return vocab, weights, docs


def _time(fn, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t)
    return best, result


def bench_bm25(impl, idx, query_bufs):
    args = (idx._ptr, idx._docs, idx._tfs, idx._len, idx._idf)
    return [list(impl.bm25_scores(*args, q, idx.k1, idx.b, idx.avgdl)) for q in query_bufs]


def bench_bleu(impl, pairs):
    return [impl.clipped_matches(c, r, n) for c, r in pairs for n in (1, 2, 3, 4)]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--docs", type=int, default=20000)
    ap.add_argument("--queries", type=int, default=200)
    ap.add_argument("--pairs", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = random.Random(args.seed)
    vocab, weights, docs = _corpus(rng, args.docs)
    t0 = time.perf_counter()
    idx = BM25Index(docs)
    print(f"index: {args.docs} docs, {len(idx.vocab)} terms, built in {time.perf_counter() - t0:.2f}s")
    query_bufs = []
    for _ in range(args.queries):
        terms = {t for t in rng.choices(vocab, weights, k=4)} & idx.vocab.keys()
        query_bufs.append(kernels.int_buffer([idx.vocab[t] for t in sorted(terms)]))

    words = vocab[:300]
    pairs = [_encode_pair(rng.choices(words, k=rng.randint(20, 80)), rng.choices(words, k=rng.randint(20, 80)))
             for _ in range(args.pairs)]

    impls = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels is not None else [])
    results = {}
    for label, impl in impls:
        t_bm25, r_bm25 = _time(lambda: bench_bm25(impl, idx, query_bufs))
        t_bleu, r_bleu = _time(lambda: bench_bleu(impl, pairs))
        results[label] = (t_bm25, t_bleu, r_bm25, r_bleu)
        print(f"{label:>7}: bm25 {t_bm25 * 1000:9.1f} ms  |  clipped n-gram matches {t_bleu * 1000:9.1f} ms")
    if "cython" in results:
        py, cy = results["python"], results["cython"]
        assert py[2] == cy[2] and py[3] == cy[3], "backends disagree"
        print(f"speedup: bm25 x{py[0] / cy[0]:.1f}, bleu x{py[1] / cy[1]:.1f} (outputs identical)")
    else:
        print("compiled extension not available; only the Python kernels were timed")
    print(f"active backend at import: {kernels.BACKEND}")


if __name__ == "__main__":
    main()
