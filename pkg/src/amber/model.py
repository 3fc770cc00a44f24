"""Modality heads, gated fusion and student/expert role assignment.

Three heads produce class distributions: "a" and "t" consume their own
embeddings, "at" consumes the gated fusion of both. Each head is a two-layer
MLP (linear, ReLU, linear, softmax). One head is designated the student; the
other two act as experts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

MODALITIES = ("a", "t", "at")

CHECKPOINT_FORMAT = "amber-ckpt-v1"


@dataclass
class ModelConfig:
    dim_a: int
    dim_t: int
    n_classes: int
    hidden: int = 256
    fusion_dim: int = 256
    student: str = "at"

    def __post_init__(self):
        for name in ("dim_a", "dim_t", "n_classes", "hidden", "fusion_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.student not in MODALITIES:
            raise ValueError(f"student must be one of {MODALITIES}, got {self.student!r}")

    @property
    def experts(self):
        return tuple(m for m in MODALITIES if m != self.student)

    def head_input_dim(self, modality):
        return {"a": self.dim_a, "t": self.dim_t, "at": self.fusion_dim}[modality]

    def to_dict(self):
        return {
            "dim_a": self.dim_a,
            "dim_t": self.dim_t,
            "n_classes": self.n_classes,
            "hidden": self.hidden,
            "fusion_dim": self.fusion_dim,
            "student": self.student,
        }


def param_shapes(cfg: ModelConfig) -> dict:
    """Name -> shape for every trainable array, in canonical creation order."""
    shapes = {}
    for m in MODALITIES:
        d = cfg.head_input_dim(m)
        shapes[f"{m}.w1"] = (d, cfg.hidden)
        shapes[f"{m}.b1"] = (cfg.hidden,)
        shapes[f"{m}.w2"] = (cfg.hidden, cfg.n_classes)
        shapes[f"{m}.b2"] = (cfg.n_classes,)
    d_cat = cfg.dim_a + cfg.dim_t
    shapes["fuse.gate_w"] = (d_cat, cfg.fusion_dim)
    shapes["fuse.gate_b"] = (cfg.fusion_dim,)
    shapes["fuse.proj_a"] = (cfg.dim_a, cfg.fusion_dim)
    shapes["fuse.proj_t"] = (cfg.dim_t, cfg.fusion_dim)
    return shapes


def init_params(cfg: ModelConfig, rng) -> dict:
    """Fresh parameter dict, each array uniform in +-1/sqrt(fan_in).

    `rng` is a `numpy.random.Generator` (or a seed). Creation order is fixed
    so a given seed always yields the same parameters. The fan-in of a layer
    also bounds its bias.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    params = {}
    for name, shape in param_shapes(cfg).items():
        fan_in = shape[0] if name.endswith((".w1", ".w2", "gate_w", "proj_a", "proj_t")) else _bias_fan_in(cfg, name)
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def _bias_fan_in(cfg, name):
    if name.endswith(".b1"):
        return cfg.head_input_dim(name.split(".")[0])
    if name.endswith(".b2"):
        return cfg.hidden
    return cfg.dim_a + cfg.dim_t  # fuse.gate_b


def wrap_params(params: dict, requires_grad=True) -> dict:
    return {k: ad.Tensor(v, requires_grad=requires_grad) for k, v in params.items()}


def head_forward(tensors: dict, modality: str, h: ad.Tensor) -> ad.Tensor:
    """p_m = softmax(W2 @ relu(W1 @ h + b1) + b2), rows are distributions."""
    if modality not in MODALITIES:
        raise ValueError(f"unknown modality {modality!r}")
    w1 = tensors[f"{modality}.w1"]
    if h.data.ndim != 2 or h.data.shape[1] != w1.data.shape[0]:
        raise ValueError(
            f"head {modality!r} expects input dim {w1.data.shape[0]}, got {h.data.shape}"
        )
    if not np.all(np.isfinite(h.data)):
        raise ValueError(f"non-finite input to head {modality!r}")
    hid = ad.relu(ad.add(ad.matmul(h, w1), tensors[f"{modality}.b1"]))
    logits = ad.add(ad.matmul(hid, tensors[f"{modality}.w2"]), tensors[f"{modality}.b2"])
    return ad.softmax(logits)


def fuse(tensors: dict, h_a: ad.Tensor, h_t: ad.Tensor) -> ad.Tensor:
    """Gated fusion of the projected embeddings.

    g = sigmoid([h_a; h_t] @ W_g + b_g)
    h_at = g * (h_a @ W_a) + (1 - g) * (h_t @ W_t)
    """
    if h_a.data.shape[0] != h_t.data.shape[0]:
        raise ValueError(
            f"batch sizes differ: {h_a.data.shape[0]} vs {h_t.data.shape[0]}"
        )
    gate = ad.sigmoid(
        ad.add(ad.matmul(ad.concat(h_a, h_t), tensors["fuse.gate_w"]), tensors["fuse.gate_b"])
    )
    proj_a = ad.matmul(h_a, tensors["fuse.proj_a"])
    proj_t = ad.matmul(h_t, tensors["fuse.proj_t"])
    ones = ad.constant(np.ones_like(gate.data))
    inv_gate = ad.add(ones, ad.scalar_mul(-1.0, gate))
    return ad.add(ad.elementwise_mul(gate, proj_a), ad.elementwise_mul(inv_gate, proj_t))


def forward_all(tensors: dict, h_a: ad.Tensor, h_t: ad.Tensor, cfg: ModelConfig) -> dict:
    """All three head distributions; `outputs[cfg.student]` is the student."""
    h_at = fuse(tensors, h_a, h_t)
    return {
        "a": head_forward(tensors, "a", h_a),
        "t": head_forward(tensors, "t", h_t),
        "at": head_forward(tensors, "at", h_at),
    }


def predict(params: dict, cfg: ModelConfig, h_a: np.ndarray, h_t: np.ndarray) -> dict:
    """Gradient-free forward pass; returns plain arrays per modality."""
    tensors = wrap_params(params, requires_grad=False)
    outputs = forward_all(tensors, ad.constant(h_a), ad.constant(h_t), cfg)
    return {m: out.data for m, out in outputs.items()}


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, cfg: ModelConfig, params: dict, provenance=None):
    """Write config + flat parameter arrays as a versioned JSON blob."""
    blob = {
        "format": CHECKPOINT_FORMAT,
        "config": cfg.to_dict(),
        "provenance": provenance or {},
        "params": {
            name: {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
            for name, arr in params.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh)
        fh.write("\n")


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        blob = json.load(fh)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format: {blob.get('format')!r}")
    cfg = ModelConfig(**blob["config"])
    params = {}
    for name, entry in blob["params"].items():
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite values in checkpoint parameter {name!r}")
        params[name] = arr
    expected = param_shapes(cfg)
    got = {k: v.shape for k, v in params.items()}
    if expected != got:
        raise ValueError("checkpoint parameters do not match its model config")
    return cfg, params, blob.get("provenance", {})
