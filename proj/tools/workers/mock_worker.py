#!/usr/bin/env python3
"""Deterministic mock worker for the sit extractor/embedder protocol.

Speaks line-delimited JSON on stdin/stdout. The model is a fixed seeded
linear projection, so the vector-Jacobian products are exact and the C++
adapter's gradient path can be tested end to end without any checkpoints.

Usage:
  mock_worker.py --kind extractor [--input-size 16] [--seed 7]
  mock_worker.py --kind embedder  [--input-size 16] [--seed 7]
"""

import argparse
import hashlib
import json
import sys

import numpy as np


def fail(msg):
    print(json.dumps({"error": msg}), flush=True)


class MockExtractor:
    def __init__(self, side, seed):
        self.side = side
        self.layer = 11
        self.n_tokens = 8
        self.key_dim = 6
        self.cls_dim = 5
        rng = np.random.RandomState(seed)
        d = side * side * 3
        self.wk = rng.randn(self.n_tokens * self.key_dim, d) * 0.3
        self.wc = rng.randn(self.cls_dim, d) * 0.3
        self.bk = rng.randn(self.n_tokens * self.key_dim) * 0.1

    def hello(self):
        return {
            "kind": "extractor",
            "layer": self.layer,
            "input_h": self.side,
            "input_w": self.side,
            "n_tokens": self.n_tokens,
            "key_dim": self.key_dim,
            "cls_dim": self.cls_dim,
        }

    def extract(self, req):
        x = np.asarray(req["image"], dtype=np.float64)
        return {"keys": (self.wk @ x + self.bk).tolist(), "cls": (self.wc @ x).tolist()}

    def extract_vjp(self, req):
        gk = np.asarray(req["grad_keys"], dtype=np.float64)
        gc = np.asarray(req["grad_cls"], dtype=np.float64)
        return {"grad_image": (self.wk.T @ gk + self.wc.T @ gc).tolist()}


class MockEmbedder:
    def __init__(self, side, seed):
        self.side = side
        self.part_dims = [4, 3]
        rng = np.random.RandomState(seed + 1)
        d = side * side * 3
        self.w1 = rng.randn(self.part_dims[0], d) * 0.2
        self.w2 = rng.randn(self.part_dims[1], d) * 0.2

    def hello(self):
        return {
            "kind": "embedder",
            "model_ids": ["mock-a", "mock-b"],
            "part_dims": self.part_dims,
            "input_h": self.side,
            "input_w": self.side,
        }

    def embed_image(self, req):
        x = np.asarray(req["image"], dtype=np.float64)
        return {"parts": np.concatenate([self.w1 @ x, self.w2 @ x]).tolist()}

    def embed_image_vjp(self, req):
        g = np.asarray(req["grad_parts"], dtype=np.float64)
        g1, g2 = g[: self.part_dims[0]], g[self.part_dims[0]:]
        return {"grad_image": (self.w1.T @ g1 + self.w2.T @ g2).tolist()}

    def embed_text(self, req):
        text = req.get("text", "")
        if not text:
            return {"error": "empty prompt"}
        digest = hashlib.sha256(text.encode()).digest()
        rng = np.random.RandomState(int.from_bytes(digest[:4], "little"))
        return {"parts": rng.randn(sum(self.part_dims)).tolist()}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--kind", choices=["extractor", "embedder"], required=True)
    ap.add_argument("--input-size", type=int, default=16)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    model = (MockExtractor if args.kind == "extractor" else MockEmbedder)(args.input_size, args.seed)

    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
            op = req.get("op")
            handler = getattr(model, op, None) if op != "hello" else None
            if op == "hello":
                reply = model.hello()
            elif handler is None:
                reply = {"error": f"unsupported op '{op}'"}
            else:
                reply = handler(req)
        except Exception as exc:  # noqa: BLE001 - report everything to the parent
            reply = {"error": str(exc)}
        print(json.dumps(reply), flush=True)


if __name__ == "__main__":
    main()
