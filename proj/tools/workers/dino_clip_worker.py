#!/usr/bin/env python3
"""Reference worker wrapping pretrained DINO ViT / CLIP checkpoints.

Serves the same line-JSON protocol as mock_worker.py, backed by torch:

  dino_clip_worker.py --kind extractor --checkpoint facebook/dino-vitb8 --layer 11
  dino_clip_worker.py --kind embedder --checkpoint openai/clip-vit-base-patch32 \
      [--checkpoint openai/clip-vit-base-patch16 ...]

The extractor returns the per-token keys of the chosen self-attention
layer and the last-layer [CLS] token; the embedder returns one raw vector
per listed CLIP checkpoint (the C++ side normalizes and concatenates).
VJPs come from torch.autograd, so the manifold-corrected gradient flows
through the real networks. Requires torch + transformers and downloaded
checkpoints; images arrive already resized to the model input size, as
channel-planar floats in [-1, 1].
"""

import argparse
import json
import sys


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--kind", choices=["extractor", "embedder"], required=True)
    ap.add_argument("--checkpoint", action="append", required=True)
    ap.add_argument("--layer", type=int, default=11)
    ap.add_argument("--input-size", type=int, default=224)
    args = ap.parse_args()

    try:
        import torch
        from transformers import CLIPModel, CLIPProcessor, ViTModel
    except ImportError as exc:
        print(json.dumps({"error": f"worker needs torch+transformers: {exc}"}), flush=True)
        return

    side = args.input_size

    def to_tensor(req, grad):
        import numpy as np

        x = np.asarray(req["image"], dtype=np.float32).reshape(req["c"], req["h"], req["w"])
        t = torch.from_numpy(x).unsqueeze(0)
        t.requires_grad_(grad)
        return t

    if args.kind == "extractor":
        model = ViTModel.from_pretrained(args.checkpoint[0], add_pooling_layer=False)
        model.eval()
        layer = model.encoder.layer[args.layer].attention.attention

        captured = {}

        def key_hook(module, inputs, output):
            # key projection output: (batch, tokens, dim)
            captured["keys"] = module.key(inputs[0])

        layer.register_forward_hook(key_hook)
        n_tokens = (side // model.config.patch_size) ** 2
        key_dim = model.config.hidden_size
        cls_dim = model.config.hidden_size

        def forward(x):
            out = model(pixel_values=x).last_hidden_state
            keys = captured["keys"][0, 1:, :]  # spatial tokens only
            cls = out[0, 0, :]
            return keys, cls

        def handle(req):
            op = req["op"]
            if op == "hello":
                return {
                    "kind": "extractor",
                    "layer": args.layer,
                    "input_h": side,
                    "input_w": side,
                    "n_tokens": n_tokens,
                    "key_dim": key_dim,
                    "cls_dim": cls_dim,
                }
            if op == "extract":
                with torch.no_grad():
                    keys, cls = forward(to_tensor(req, grad=False))
                return {"keys": keys.reshape(-1).tolist(), "cls": cls.tolist()}
            if op == "extract_vjp":
                x = to_tensor(req, grad=True)
                keys, cls = forward(x)
                gk = torch.tensor(req["grad_keys"], dtype=torch.float32).reshape(keys.shape)
                gc = torch.tensor(req["grad_cls"], dtype=torch.float32)
                (grad,) = torch.autograd.grad((keys * gk).sum() + (cls * gc).sum(), x)
                return {"grad_image": grad.reshape(-1).tolist()}
            return {"error": f"unsupported op '{op}'"}

    else:
        models = []
        for ckpt in args.checkpoint:
            m = CLIPModel.from_pretrained(ckpt)
            m.eval()
            proc = CLIPProcessor.from_pretrained(ckpt)
            models.append((m, proc))
        part_dims = [m.config.projection_dim for m, _ in models]

        def embed_all(x):
            parts = []
            for m, _ in models:
                parts.append(m.get_image_features(pixel_values=x)[0])
            return torch.cat(parts)

        def handle(req):
            op = req["op"]
            if op == "hello":
                return {
                    "kind": "embedder",
                    "model_ids": list(args.checkpoint),
                    "part_dims": part_dims,
                    "input_h": side,
                    "input_w": side,
                }
            if op == "embed_image":
                with torch.no_grad():
                    parts = embed_all(to_tensor(req, grad=False))
                return {"parts": parts.tolist()}
            if op == "embed_image_vjp":
                x = to_tensor(req, grad=True)
                parts = embed_all(x)
                g = torch.tensor(req["grad_parts"], dtype=torch.float32)
                (grad,) = torch.autograd.grad((parts * g).sum(), x)
                return {"grad_image": grad.reshape(-1).tolist()}
            if op == "embed_text":
                outs = []
                for m, proc in models:
                    tok = proc(text=[req["text"]], return_tensors="pt", padding=True)
                    with torch.no_grad():
                        outs.append(m.get_text_features(**tok)[0])
                return {"parts": torch.cat(outs).tolist()}
            return {"error": f"unsupported op '{op}'"}

    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            reply = handle(json.loads(line))
        except Exception as exc:  # noqa: BLE001
            reply = {"error": str(exc)}
        print(json.dumps(reply), flush=True)


if __name__ == "__main__":
    main()
