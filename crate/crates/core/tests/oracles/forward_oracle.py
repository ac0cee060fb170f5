"""Reference forward pass for a saved model checkpoint, written against
torch.nn.functional. Used to freeze the golden probabilities in the model
unit tests.

usage: python forward_oracle.py CHECKPOINT.json [FRAMES]
"""
import base64
import json
import math
import sys

import numpy as np
import torch
import torch.nn.functional as F


def load(path):
    ck = json.load(open(path))
    assert ck["dtype"] == "f64"
    params = {}
    for t in ck["tensors"]:
        raw = np.frombuffer(base64.b64decode(t["data"]), dtype="<f8")
        params[t["name"]] = torch.tensor(raw.reshape(t["shape"]).copy())
    return ck["config"], params


def golden_input(mels, frames):
    x = np.zeros((mels, frames))
    for m in range(mels):
        for f in range(frames):
            x[m, f] = math.sin(0.37 * m + 0.11 * f) + 0.5 * math.cos(0.05 * f * m)
    # the model consumes f32 features
    return torch.tensor(x.astype(np.float32).astype(np.float64))


def layer_norm(x, p, name):
    return F.layer_norm(x, (x.shape[-1],), p[name + ".g"], p[name + ".b"], eps=1e-5)


def linear(x, p, name):
    y = x @ p[name + ".w"]
    if name + ".b" in p:
        y = y + p[name + ".b"]
    return y


def forward(cfg, p, x):
    # x: [mels, frames] -> conv1d layout [1, C, T]
    h = x.unsqueeze(0)
    for i, d in enumerate(cfg["dilations"]):
        w = p[f"tcn.{i}.conv.w"]  # [K, Cin, Cout]
        k = w.shape[0]
        weight = w.permute(2, 1, 0)  # [Cout, Cin, K]
        padded = F.pad(h, ((k - 1) * d, 0))
        act = F.relu(F.conv1d(padded, weight, p[f"tcn.{i}.conv.b"], dilation=d))
        seq = h[0].T
        res = seq @ p[f"tcn.{i}.res.w"] if f"tcn.{i}.res.w" in p else seq
        total = res + act[0].T
        normed = layer_norm(total, p, f"tcn.{i}.ln")
        pooled = F.max_pool1d(normed.T.unsqueeze(0), cfg["pool_stride"])
        h = pooled
    seq = h[0].T  # [T, C]
    if cfg["main_model"] == "attention_encoder":
        z = linear(seq, p, "proj")
        t, dm = z.shape
        pos = torch.arange(t, dtype=torch.float64).unsqueeze(1)
        i = torch.arange(dm)
        angle = pos / torch.pow(10000.0, 2.0 * (i // 2).double() / dm)
        pe = torch.where(i % 2 == 0, torch.sin(angle), torch.cos(angle))
        z = z + pe
        heads = cfg["n_heads"]
        for l in range(cfg["encoder_layers"]):
            u = layer_norm(z, p, f"enc.{l}.ln1")
            q = linear(u, p, f"enc.{l}.attn.q").view(t, heads, -1).transpose(0, 1)
            kk = linear(u, p, f"enc.{l}.attn.k").view(t, heads, -1).transpose(0, 1)
            v = linear(u, p, f"enc.{l}.attn.v").view(t, heads, -1).transpose(0, 1)
            a = F.scaled_dot_product_attention(q, kk, v)
            merged = a.transpose(0, 1).reshape(t, dm)
            z = z + linear(merged, p, f"enc.{l}.attn.o")
            u2 = layer_norm(z, p, f"enc.{l}.ln2")
            z = z + linear(F.relu(linear(u2, p, f"enc.{l}.ff1")), p, f"enc.{l}.ff2")
        z = layer_norm(z, p, "enc.final_ln")
        pooled = z.mean(0)
    else:
        m = seq.mean(0)
        pooled = F.relu(linear(F.relu(linear(m, p, "mlp.fc1")), p, "mlp.fc2"))
    return torch.sigmoid(linear(pooled, p, "head"))


if __name__ == "__main__":
    cfg, p = load(sys.argv[1])
    frames = int(sys.argv[2]) if len(sys.argv) > 2 else 120
    print(f"{forward(cfg, p, golden_input(cfg['n_mels'], frames)).item():.17f}")
