"""Regenerates the majority-cluster HDBSCAN fixtures.

Reference: scikit-learn's HDBSCAN with a precomputed metric,
min_cluster_size = n // 2 + 1, min_samples = 1, allow_single_cluster = True.
Members of the (single) selected cluster are labelled 1, noise 0.

    python3 generate.py
"""
import os

import numpy as np
from sklearn.cluster import HDBSCAN

HERE = os.path.dirname(os.path.abspath(__file__))
COUNT = 120


def cosine_matrix(vectors):
    norms = np.linalg.norm(vectors, axis=1)
    sim = vectors @ vectors.T / np.outer(norms, norms)
    dist = 1.0 - sim
    n = len(vectors)
    for i in range(n):
        dist[i, i] = 0.0
        for j in range(i + 1, n):
            dist[j, i] = dist[i, j]
    return np.clip(dist, 0.0, 2.0)


def instance(rng):
    n = int(rng.integers(5, 31))
    dim = int(rng.integers(3, 12))
    kind = rng.integers(0, 3)
    if kind == 0:
        # majority group around one direction plus scattered outliers
        base = rng.normal(size=dim)
        benign = int(rng.integers(n // 2 + 1, n + 1))
        spread = rng.uniform(0.05, 0.8)
        rows = [base + spread * rng.normal(size=dim) for _ in range(benign)]
        rows += [rng.normal(size=dim) * 2.0 for _ in range(n - benign)]
        vectors = np.array(rows)
    elif kind == 1:
        # two competing groups
        a, b = rng.normal(size=dim), rng.normal(size=dim)
        split = int(rng.integers(1, n))
        spread = rng.uniform(0.05, 0.5)
        rows = [a + spread * rng.normal(size=dim) for _ in range(split)]
        rows += [b + spread * rng.normal(size=dim) for _ in range(n - split)]
        vectors = np.array(rows)
    else:
        vectors = rng.normal(size=(n, dim))
    vectors = vectors[rng.permutation(n)]
    return cosine_matrix(vectors)


def reference_labels(matrix):
    n = len(matrix)
    model = HDBSCAN(
        min_cluster_size=n // 2 + 1,
        min_samples=1,
        metric="precomputed",
        allow_single_cluster=True,
    )
    raw = model.fit_predict(matrix)
    clusters = set(raw) - {-1}
    assert len(clusters) <= 1, raw
    return [1 if v >= 0 else 0 for v in raw]


def write(path, matrix, labels):
    n = len(matrix)
    with open(path, "w") as fh:
        fh.write(f"n {n}\n")
        fh.write("matrix\n")
        for row in matrix:
            fh.write(" ".join("%.17g" % v for v in row) + "\n")
        fh.write("labels\n")
        fh.write(" ".join(str(v) for v in labels) + "\n")


def reparse(matrix):
    return np.array([[float("%.17g" % v) for v in row] for row in matrix])


def main():
    rng = np.random.default_rng(20240611)
    for idx in range(COUNT):
        matrix = reparse(instance(rng))
        write(os.path.join(HERE, f"case_{idx:03}.txt"), matrix, reference_labels(matrix))

    # five tight points plus two far outliers
    m = np.full((7, 7), 1.0)
    m[:5, :5] = 0.01
    m[5, 6] = m[6, 5] = 1.5
    np.fill_diagonal(m, 0.0)
    write(os.path.join(HERE, "tight_five_of_seven.txt"), m, reference_labels(m))


if __name__ == "__main__":
    main()
