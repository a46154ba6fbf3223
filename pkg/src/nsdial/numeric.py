"""Numeric kernel: layer primitives, Gumbel-Softmax sampling and optimisation.

Tensors are ``torch.Tensor`` (float32 by default) and reverse-mode
differentiation is torch autograd. This module pins down the exact
conventions the model relies on so they are testable in isolation.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

import numpy as np
import torch
import torch.nn.functional as F

LEAKY_SLOPE = 0.01
GUMBEL_CLAMP = 1e-20
DTYPE = torch.float32


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


def linear(weight: torch.Tensor, bias: torch.Tensor | None, x: torch.Tensor) -> torch.Tensor:
    """``y = W x (+ b)`` for a rank-2 ``W`` and rank-1 or batched rank-2 ``x``."""
    if weight.dim() != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: weight {tuple(weight.shape)} incompatible with input {tuple(x.shape)}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {tuple(bias.shape)} does not match output {weight.shape[0]}")
    return F.linear(x, weight, bias)


def leaky_relu(x: torch.Tensor, slope: float = LEAKY_SLOPE) -> torch.Tensor:
    return F.leaky_relu(x, negative_slope=slope)


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(x)


def softmax(x: torch.Tensor) -> torch.Tensor:
    return torch.softmax(x, dim=-1)


def sample_gumbel(shape, generator: torch.Generator | None = None, dtype=DTYPE) -> torch.Tensor:
    """i.i.d. Gumbel(0, 1) noise by inverse CDF, ``u`` kept away from {0, 1}."""
    u = torch.rand(shape, generator=generator, dtype=torch.float64)
    u = u.clamp(GUMBEL_CLAMP, 1.0 - 1e-16)
    return (-torch.log(-torch.log(u))).to(dtype)


def gumbel_softmax(
    logits: torch.Tensor,
    tau: float,
    generator: torch.Generator | None = None,
    *,
    straight_through: bool = False,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """Relaxed one-hot sample ``softmax((logits + g) / tau)`` along the last axis.

    ``noise`` overrides the drawn Gumbel noise, which lets callers freeze it.
    With ``straight_through`` the forward value is the hard one-hot while the
    gradient is that of the soft sample.
    """
    if tau <= 0:
        raise ValueError(f"gumbel_softmax: tau must be positive, got {tau}")
    if noise is None:
        noise = sample_gumbel(logits.shape, generator, dtype=logits.dtype)
    y = torch.softmax((logits + noise) / tau, dim=-1)
    if straight_through:
        hard = F.one_hot(y.argmax(dim=-1), y.shape[-1]).to(y.dtype)
        y = hard + (y - y.detach())
    return y


def check_finite(t: torch.Tensor, what: str = "tensor") -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise NonFiniteError(f"non-finite values in {what}")
    return t


def backward(loss: torch.Tensor) -> None:
    """Populate ``.grad`` of every leaf reachable from a scalar ``loss``."""
    if loss.dim() != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    check_finite(loss, "loss")
    loss.backward()


def make_adam(params: Iterable[torch.nn.Parameter], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    return torch.optim.Adam(list(params), lr=lr, betas=betas, eps=eps)


def adam_step(optimizer: torch.optim.Optimizer, max_grad_norm: float | None = None) -> None:
    """Apply one Adam update (optionally after clipping) and zero the gradients."""
    if max_grad_norm is not None:
        params = [p for g in optimizer.param_groups for p in g["params"] if p.grad is not None]
        torch.nn.utils.clip_grad_norm_(params, max_grad_norm)
    optimizer.step()
    optimizer.zero_grad(set_to_none=False)


# -- checkpoint format -------------------------------------------------------

def save_tensors(named: dict[str, torch.Tensor], manifest_path: str | Path, meta: dict | None = None) -> None:
    """JSON manifest of ``{name, shape, offset}`` plus a little-endian float32 sidecar."""
    manifest_path = Path(manifest_path)
    bin_path = manifest_path.with_suffix(".bin")
    entries = []
    offset = 0
    chunks = []
    for name, tensor in named.items():
        arr = tensor.detach().cpu().to(torch.float32).numpy().astype("<f4", copy=False)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes(order="C"))
        offset += arr.nbytes
    bin_path.write_bytes(b"".join(chunks))
    doc = {"format": "nsdial-checkpoint/1", "binary": bin_path.name, "nbytes": offset, "tensors": entries}
    if meta is not None:
        doc["meta"] = meta
    manifest_path.write_text(json.dumps(doc, indent=1), encoding="utf-8")


def load_tensors(manifest_path: str | Path) -> tuple[dict[str, torch.Tensor], dict]:
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
        entries = doc["tensors"]
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise CheckpointError(f"unreadable checkpoint manifest {manifest_path}: {exc}") from exc
    blob = (manifest_path.parent / doc["binary"]).read_bytes()
    if len(blob) != doc.get("nbytes", len(blob)):
        raise CheckpointError(f"checkpoint binary has {len(blob)} bytes, manifest expects {doc['nbytes']}")
    out: dict[str, torch.Tensor] = {}
    expected = 0
    for e in entries:
        if e["offset"] != expected:
            raise CheckpointError(f"tensor {e['name']}: offset {e['offset']} but expected {expected}")
        count = int(np.prod(e["shape"], dtype=np.int64))
        end = e["offset"] + 4 * count
        if end > len(blob):
            raise CheckpointError(f"tensor {e['name']} runs past end of binary (truncated?)")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=e["offset"]).reshape(e["shape"])
        if e["name"] in out:
            raise CheckpointError(f"tensor {e['name']} listed twice")
        out[e["name"]] = torch.from_numpy(arr.copy())
        expected = end
    if expected != len(blob):
        raise CheckpointError("checkpoint binary has trailing bytes not described by the manifest")
    return out, doc.get("meta", {})
