#!/usr/bin/env python3
"""Writes scenarios/spmv_csr.json: a seeded CSR matrix with skewed column reuse.

Columns are drawn from a small set of hot columns (every hot_stride-th column)
with probability hot_prob, otherwise uniformly.
"""

import argparse
import json
import random


def build(num_rows, num_cols, seed, hot_stride, hot_prob, max_nnz):
    rng = random.Random(seed)
    row_offsets = [0]
    col_indices = []
    for _ in range(num_rows):
        nnz = rng.randint(1, max_nnz)
        cols = set()
        while len(cols) < nnz:
            if rng.random() < hot_prob:
                cols.add(rng.randrange(0, num_cols, hot_stride))
            else:
                cols.add(rng.randrange(num_cols))
        col_indices.extend(sorted(cols))
        row_offsets.append(len(col_indices))
    nnz_total = len(col_indices)
    return {
        "kernel": "spmv_csr",
        "params": {"numRows": num_rows},
        "grid": [num_rows // 128, 1, 1],
        "block": [128, 1, 1],
        "allocs": [
            {"label": "rowOffsets", "space": "global", "elem_size": 4, "count": num_rows + 1},
            {"label": "colIndices", "space": "global", "elem_size": 4, "count": nnz_total},
            {"label": "values", "space": "global", "elem_size": 4, "count": nnz_total},
            {"label": "x", "space": "global", "elem_size": 4, "count": num_cols},
            {"label": "y", "space": "global", "elem_size": 4, "count": num_rows},
        ],
        "inputs": {"rowOffsets": row_offsets, "colIndices": col_indices},
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="scenarios/spmv_csr.json")
    ap.add_argument("--rows", type=int, default=512)
    ap.add_argument("--cols", type=int, default=96)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--hot-stride", type=int, default=8)
    ap.add_argument("--hot-prob", type=float, default=0.5)
    ap.add_argument("--max-nnz", type=int, default=2)
    a = ap.parse_args()
    doc = build(a.rows, a.cols, a.seed, a.hot_stride, a.hot_prob, a.max_nnz)
    with open(a.out, "w") as f:
        json.dump(doc, f, separators=(",", ":"))
        f.write("\n")


if __name__ == "__main__":
    main()
