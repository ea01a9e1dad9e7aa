"""Independent scale-table oracle.

Reads a natively named safetensors model (config in the metadata), walks the
norms in execution order and evaluates the three closed-form scales with
numpy (exact SVD for the spectral norm). Prints norm_id and s, one per line.

    python3 scales_oracle.py model.safetensors
"""
import json
import struct
import sys

import numpy as np


def read_safetensors(path):
    with open(path, "rb") as f:
        raw = f.read()
    (n,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8 : 8 + n])
    meta = header.pop("__metadata__", {})
    body = raw[8 + n :]
    tensors = {}
    for name, e in header.items():
        assert e["dtype"] == "F32", name
        b, end = e["data_offsets"]
        tensors[name] = np.frombuffer(body[b:end], dtype="<f4").astype(np.float64).reshape(e["shape"])
    return tensors, json.loads(meta["slanc_config"])


def frob_gamma(gamma, m):
    return np.linalg.norm(np.diag(gamma) @ m, "fro")


def attention_scale(gamma, w_v, p):
    return frob_gamma(gamma, w_v @ p + np.eye(len(gamma)))


def mlp_scale(gamma, e, b, g, gated):
    d = len(gamma)
    if not gated:
        return frob_gamma(gamma, e @ g + np.eye(d))
    return frob_gamma(gamma, np.linalg.norm(np.diag(gamma) @ e, 2) * (b @ g) + np.eye(d))


def table(path):
    t, c = read_safetensors(path)
    gated = c["mlp_kind"] == "LlamaGated"
    n = c["n_layers"]
    boundary = c.get("boundary_norm", True)
    L = lambda i, r: t[f"layers.{i}.{r}"]

    # (norm_id, gamma of this norm, feeding block) in execution order
    seq = []
    if c["residual_placement"] == "PostLN":
        if boundary:
            seq.append(("embedding_norm", t["boundary_norm.gamma"], None))
        for i in range(n):
            seq.append((f"layers.{i}.post_attention_norm", L(i, "norm1.gamma"), ("attn", i)))
            seq.append((f"layers.{i}.post_mlp_norm", L(i, "norm2.gamma"), ("mlp", i)))
    else:
        for i in range(n):
            seq.append((f"layers.{i}.input_norm", L(i, "norm1.gamma"), ("mlp", i - 1) if i else None))
            seq.append((f"layers.{i}.post_attention_norm", L(i, "norm2.gamma"), ("attn", i)))
        if boundary:
            seq.append(("final_norm", t["boundary_norm.gamma"], ("mlp", n - 1) if n else None))

    out = []
    for k, (nid, _, feed) in enumerate(seq):
        if k == 0 or feed is None:
            out.append((nid, 1.0))
            continue
        gamma = seq[k - 1][1]
        kind, i = feed
        if kind == "attn":
            s = attention_scale(gamma, L(i, "attn.w_v"), L(i, "attn.p"))
        else:
            s = mlp_scale(gamma, L(i, "mlp.e"), L(i, "mlp.b") if gated else None, L(i, "mlp.g"), gated)
        out.append((nid, s))
    return out


if __name__ == "__main__":
    for nid, s in table(sys.argv[1]):
        print(f"{nid} {s:.17g}")
