"""Small differentiable core shared by every model.

Torch supplies reverse-mode differentiation; the layers, the optimizer and
the checkpoint format are defined here. Everything runs in float64.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

DTYPE = torch.float64


class NonFiniteError(FloatingPointError):
    pass


class ParameterStore:
    """Named float64 tensors with gradients and Adam moments."""

    def __init__(self):
        self.values: "OrderedDict[str, torch.Tensor]" = OrderedDict()
        self.moments: dict[str, tuple[torch.Tensor, torch.Tensor]] = {}
        self.step_count = 0

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __iter__(self):
        return iter(self.values.items())

    def add(self, name: str, value) -> torch.Tensor:
        if name in self.values:
            raise KeyError(f"parameter {name!r} already exists")
        t = torch.as_tensor(value, dtype=DTYPE).clone().requires_grad_(True)
        self.values[name] = t
        return t

    @property
    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: tuple(v.shape) for k, v in self.values.items()}

    def size(self) -> int:
        return sum(v.numel() for v in self.values.values())

    def zero_grad(self) -> None:
        for v in self.values.values():
            v.grad = None

    def grad(self, name: str) -> torch.Tensor:
        g = self.values[name].grad
        return torch.zeros_like(self.values[name]) if g is None else g

    def snapshot(self) -> dict[str, torch.Tensor]:
        return {k: v.detach().clone() for k, v in self.values.items()}

    def restore(self, snap: dict[str, torch.Tensor]) -> None:
        with torch.no_grad():
            for k, v in self.values.items():
                if snap[k].shape != v.shape:
                    raise ValueError(f"{k}: shape {tuple(snap[k].shape)} != {tuple(v.shape)}")
                v.copy_(snap[k])

    def check_finite(self) -> None:
        for k, v in self.values.items():
            if not torch.isfinite(v).all():
                raise NonFiniteError(f"parameter {k!r} became non-finite")

    def save(self, stem, metadata: dict | None = None) -> None:
        """Write `<stem>.json` (manifest) and `<stem>.bin` (little-endian float64)."""
        stem = Path(stem)
        manifest = {
            "parameters": [
                {"name": k, "shape": list(v.shape), "dtype": "float64"} for k, v in self.values.items()
            ],
            "metadata": metadata or {},
        }
        stem.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        flat = [v.detach().numpy().astype("<f8").ravel() for v in self.values.values()]
        stem.with_suffix(".bin").write_bytes(np.concatenate(flat).tobytes() if flat else b"")

    @classmethod
    def load(cls, stem) -> tuple["ParameterStore", dict]:
        stem = Path(stem)
        manifest = json.loads(stem.with_suffix(".json").read_text())
        data = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8")
        store, offset = cls(), 0
        for p in manifest["parameters"]:
            n = math.prod(p["shape"])
            store.add(p["name"], torch.from_numpy(data[offset:offset + n].astype(np.float64).reshape(p["shape"])))
            offset += n
        if offset != data.size:
            raise ValueError(f"{stem}: binary holds {data.size} values, manifest declares {offset}")
        return store, manifest["metadata"]


def init_uniform(gen: torch.Generator, shape, scale: float = 0.1) -> torch.Tensor:
    return (torch.rand(shape, generator=gen, dtype=DTYPE) * 2 - 1) * scale


def add_lstm(store: ParameterStore, prefix: str, n_in: int, n_hidden: int, gen: torch.Generator) -> None:
    """Gate rows are stacked input, forget, candidate, output."""
    store.add(f"{prefix}.w_ih", init_uniform(gen, (4 * n_hidden, n_in)))
    store.add(f"{prefix}.w_hh", init_uniform(gen, (4 * n_hidden, n_hidden)))
    bias = torch.zeros(4 * n_hidden, dtype=DTYPE)
    bias[n_hidden:2 * n_hidden] = 1.0
    store.add(f"{prefix}.b", bias)


def lstm_step(x_t, h_prev, c_prev, w_ih, w_hh, b):
    n_hidden = w_hh.shape[1]
    if x_t.shape[-1] != w_ih.shape[1] or h_prev.shape[-1] != n_hidden or c_prev.shape[-1] != n_hidden:
        raise ValueError(
            f"lstm_step: input {tuple(x_t.shape)}, hidden {tuple(h_prev.shape)}, cell {tuple(c_prev.shape)} "
            f"do not fit weights {tuple(w_ih.shape)}/{tuple(w_hh.shape)}"
        )
    gates = x_t @ w_ih.T + h_prev @ w_hh.T + b
    i, f, g, o = gates.chunk(4, dim=-1)
    c_t = torch.sigmoid(f) * c_prev + torch.sigmoid(i) * torch.tanh(g)
    h_t = torch.sigmoid(o) * torch.tanh(c_t)
    return h_t, c_t


def reverse_padded(x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    """Reverse each row's first `lengths[b]` steps of a (B, T, ...) tensor; padding stays put."""
    T = x.shape[1]
    t = torch.arange(T).unsqueeze(0)
    L = lengths.unsqueeze(1)
    idx = torch.where(t < L, L - 1 - t, t)
    return x.gather(1, idx.view(*idx.shape, *([1] * (x.dim() - 2))).expand_as(x))


def run_lstm(store: ParameterStore, prefix: str, x: torch.Tensor, lengths: torch.Tensor,
             reverse: bool = False):
    """Run over a padded (B, T, E) batch. Returns outputs (B, T, H) and the state at each row's last step."""
    w_ih, w_hh, b = store[f"{prefix}.w_ih"], store[f"{prefix}.w_hh"], store[f"{prefix}.b"]
    B, T, _ = x.shape
    if reverse:
        x = reverse_padded(x, lengths)
    h = x.new_zeros(B, w_hh.shape[1])
    c = x.new_zeros(B, w_hh.shape[1])
    outs = []
    for t in range(T):
        h, c = lstm_step(x[:, t], h, c, w_ih, w_hh, b)
        outs.append(h)
    out = torch.stack(outs, dim=1)
    last = out[torch.arange(B), lengths - 1]
    if reverse:
        out = reverse_padded(out, lengths)
    return out, last


def softmax_with_temperature(z, tau: float = 1.0) -> torch.Tensor:
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z = torch.as_tensor(z, dtype=DTYPE) / tau
    z = z - z.max(dim=-1, keepdim=True).values
    e = torch.exp(z)
    return e / e.sum(dim=-1, keepdim=True)


def sequence_nll(logits: torch.Tensor, targets: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    """Per-row summed -log P(target) over the first `lengths[b]` steps of (B, T, V) logits."""
    V = logits.shape[-1]
    if targets.numel() and (targets.min() < 0 or targets.max() >= V):
        raise IndexError(f"target ids must lie in [0, {V})")
    logp = torch.log_softmax(logits, dim=-1).gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    mask = torch.arange(targets.shape[1]).unsqueeze(0) < lengths.unsqueeze(1)
    return -(logp * mask).sum(dim=1)


def sequence_cross_entropy(logits, targets, lengths, reduction: str = "sum") -> torch.Tensor:
    nll = sequence_nll(logits, targets, lengths)
    if reduction == "sum":
        return nll.sum()
    if reduction == "mean":
        return nll.sum() / lengths.sum()
    raise ValueError(f"unknown reduction {reduction!r}")


def perplexity(total_nll: float, n_tokens: int) -> float:
    return math.exp(total_nll / n_tokens)


def clip_grad_norm(store: ParameterStore, max_norm: float) -> float:
    grads = [v.grad for _, v in store if v.grad is not None]
    if not grads:
        return 0.0
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if norm > max_norm:
        for g in grads:
            g.mul_(max_norm / norm)
    return norm


def adam_step(store: ParameterStore, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Bias-corrected Adam update of every parameter in place."""
    for name, p in store:
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise NonFiniteError(f"gradient of {name!r} is not finite")
    store.step_count += 1
    t = store.step_count
    with torch.no_grad():
        for name, p in store:
            g = store.grad(name)
            m, v = store.moments.get(name) or (torch.zeros_like(p), torch.zeros_like(p))
            m.mul_(beta1).add_(g, alpha=1 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
            store.moments[name] = (m, v)
            m_hat = m / (1 - beta1 ** t)
            v_hat = v / (1 - beta2 ** t)
            p.sub_(lr * m_hat / (v_hat.sqrt() + eps))
    store.check_finite()


def gradient_check(loss_fn: Callable[[], torch.Tensor], store: ParameterStore, step: float = 1e-4,
                   names: Sequence[str] | None = None) -> float:
    """Max relative error between autograd and central differences over every coordinate."""
    store.zero_grad()
    loss_fn().backward()
    worst = 0.0
    for name in names or list(store.values):
        p = store[name]
        analytic = store.grad(name).detach().reshape(-1).clone()
        flat = p.data.view(-1)
        with torch.no_grad():
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = loss_fn().item()
                flat[i] = orig - step
                down = loss_fn().item()
                flat[i] = orig
                numeric = (up - down) / (2 * step)
                a = analytic[i].item()
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, err)
    store.zero_grad()
    return worst


@dataclass
class SequenceBatch:
    ids: torch.Tensor          # (B, T) padded with 0
    lengths: torch.Tensor      # (B,) true lengths including BOS/EOS
    labels: torch.Tensor | None = None

    @classmethod
    def from_sequences(cls, seqs: Sequence[Sequence[int]], labels: Sequence[int] | None = None,
                       pad_id: int = 0) -> "SequenceBatch":
        T = max(len(s) for s in seqs)
        ids = torch.full((len(seqs), T), pad_id, dtype=torch.long)
        for b, s in enumerate(seqs):
            ids[b, :len(s)] = torch.as_tensor(s, dtype=torch.long)
        lengths = torch.as_tensor([len(s) for s in seqs], dtype=torch.long)
        lab = None if labels is None else torch.as_tensor(labels, dtype=torch.long)
        return cls(ids, lengths, lab)

    def __len__(self) -> int:
        return self.ids.shape[0]


def iter_batches(seqs: Sequence[Sequence[int]], batch_size: int, labels: Sequence[int] | None = None,
                 order: Sequence[int] | None = None):
    order = range(len(seqs)) if order is None else order
    order = list(order)
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield idx, SequenceBatch.from_sequences(
            [seqs[i] for i in idx], None if labels is None else [labels[i] for i in idx]
        )
