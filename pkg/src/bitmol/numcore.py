"""Numeric substrate: parameter store, AdamW, LR schedule, softmax and gradient checking.

Reverse-mode differentiation is delegated to torch running in float64; the
optimizer, schedule and finite-difference checker are implemented here so their
exact update rules are visible and testable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping

import numpy as np
import torch

DTYPE = torch.float64

# tanh-approximation GELU constants
GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715
LN_EPS = 1e-10


class NonFiniteError(FloatingPointError):
    pass


def check_finite(t: torch.Tensor, what: str = "tensor") -> torch.Tensor:
    if not bool(torch.isfinite(t).all()):
        raise NonFiniteError(f"non-finite values in {what}")
    return t


class ParamStore:
    """Named float64 arrays with a trainability flag; iteration is in sorted name order."""

    def __init__(self, arrays: Mapping[str, torch.Tensor] | None = None,
                 frozen: set[str] | None = None):
        self._arrays: dict[str, torch.Tensor] = {}
        self._frozen: set[str] = set(frozen or ())
        for name, arr in (arrays or {}).items():
            self[name] = arr

    def __setitem__(self, name: str, arr) -> None:
        if not isinstance(arr, torch.Tensor):
            arr = torch.as_tensor(np.asarray(arr), dtype=DTYPE)
        self._arrays[name] = check_finite(arr, name)

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __len__(self) -> int:
        return len(self._arrays)

    def __iter__(self) -> Iterator[str]:
        return iter(self.names())

    def names(self) -> list[str]:
        return sorted(self._arrays)

    def items(self):
        return [(n, self._arrays[n]) for n in self.names()]

    def trainable(self, name: str) -> bool:
        return name not in self._frozen

    def freeze(self, *names: str) -> None:
        self._frozen.update(names)

    def unfreeze(self, *names: str) -> None:
        self._frozen.difference_update(names)

    @property
    def frozen(self) -> set[str]:
        return set(self._frozen)

    def trainable_names(self) -> list[str]:
        return [n for n in self.names() if n not in self._frozen]

    def update(self, other: "ParamStore | Mapping[str, torch.Tensor]") -> None:
        for name, arr in other.items():
            self[name] = arr

    def subset(self, prefix: str) -> dict[str, torch.Tensor]:
        return {n: a for n, a in self.items() if n.startswith(prefix)}

    def clone(self) -> "ParamStore":
        return ParamStore({n: a.detach().clone() for n, a in self.items()}, self._frozen)

    def num_scalars(self) -> int:
        return sum(a.numel() for a in self._arrays.values())

    def requires_grad_(self, flag: bool = True) -> "ParamStore":
        for name in self.names():
            arr = self._arrays[name]
            if flag and self.trainable(name):
                self._arrays[name] = arr.detach().requires_grad_(True)
            else:
                self._arrays[name] = arr.detach()
        return self


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def gelu(x: torch.Tensor) -> torch.Tensor:
    return 0.5 * x * (1.0 + torch.tanh(GELU_C * (x + GELU_A * x ** 3)))


def layer_norm(x: torch.Tensor, scale: torch.Tensor, shift: torch.Tensor, eps: float = LN_EPS) -> torch.Tensor:
    mu = x.mean(-1, keepdim=True)
    var = ((x - mu) ** 2).mean(-1, keepdim=True)
    return (x - mu) / torch.sqrt(var + eps) * scale + shift


def stable_softmax(logits, mask=None, dim: int = -1):
    """Max-subtracted softmax; masked-out entries (mask False) get exactly 0.

    Accepts numpy arrays or torch tensors and returns the same kind.
    """
    as_numpy = not isinstance(logits, torch.Tensor)
    x = torch.as_tensor(np.asarray(logits, dtype=np.float64)) if as_numpy else logits
    if mask is not None:
        m = torch.as_tensor(np.asarray(mask)) if not isinstance(mask, torch.Tensor) else mask
        m = m.to(torch.bool)
        if not bool(m.any(dim=dim).all()):
            raise ValueError("softmax row with every entry masked")
        x = x.masked_fill(~m, float("-inf"))
    x = x - x.amax(dim=dim, keepdim=True).detach()
    e = torch.exp(x)
    out = e / e.sum(dim=dim, keepdim=True)
    return out.numpy() if as_numpy else out


def dropout(x: torch.Tensor, p: float, generator: torch.Generator | None) -> torch.Tensor:
    if p <= 0.0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= p
    return x * keep / (1.0 - p)


# ---------------------------------------------------------------------------
# Optimisation
# ---------------------------------------------------------------------------

def lr_at_step(step: int, warmup_steps: int, total_steps: int, peak: float) -> float:
    """Linear warm-up from 0 to peak, then linear decay to 0 at total_steps."""
    if not (0 <= warmup_steps < total_steps):
        raise ValueError(f"invalid schedule: warmup={warmup_steps}, total={total_steps}")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if step < warmup_steps:
        return peak * step / warmup_steps
    return peak * (total_steps - step) / (total_steps - warmup_steps)


@dataclass
class OptState:
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)
    step: int = 0

    def clone(self) -> "OptState":
        return OptState({k: t.clone() for k, t in self.m.items()},
                        {k: t.clone() for k, t in self.v.items()}, self.step)


def adamw_step(params: ParamStore, grads: Mapping[str, torch.Tensor], state: OptState, lr: float,
               betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
               weight_decay: float = 0.0) -> tuple[ParamStore, OptState]:
    """One decoupled-weight-decay Adam update over every trainable parameter with a gradient."""
    b1, b2 = betas
    t = state.step + 1
    with torch.no_grad():
        for name in params.trainable_names():
            g = grads.get(name)
            if g is None:
                continue
            p = params[name].detach()
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)} for {name}")
            m = state.m.get(name)
            v = state.v.get(name)
            if m is None:
                m = torch.zeros_like(p)
                v = torch.zeros_like(p)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            p = p * (1 - lr * weight_decay)
            p = p - lr * m_hat / (torch.sqrt(v_hat) + eps)
            params[name] = check_finite(p, name)
            state.m[name] = m
            state.v[name] = v
    state.step = t
    return params, state


def clip_grad_norm(grads: dict[str, torch.Tensor], max_norm: float) -> float:
    """Scale all gradients in place so their global L2 norm is at most max_norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return total


def value_and_grad(loss_fn: Callable[[ParamStore], torch.Tensor], params: ParamStore):
    """Evaluate loss_fn and return (loss tensor, {name: grad}) for trainable parameters."""
    params.requires_grad_(True)
    loss = loss_fn(params)
    check_finite(loss.detach(), "loss")
    names = [n for n in params.trainable_names() if params[n].requires_grad]
    grads = torch.autograd.grad(loss, [params[n] for n in names], allow_unused=True)
    out = {}
    for n, g in zip(names, grads):
        out[n] = torch.zeros_like(params[n]) if g is None else g.detach()
    params.requires_grad_(False)
    return loss.detach(), out


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: list[tuple[str, int, float, float, float]]  # (name, flat index, analytic, numeric, rel)
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "max_rel_error": self.max_rel_error,
            "tol": self.tol,
            "checked": [
                {"name": n, "index": i, "analytic": a, "numeric": b, "rel_error": r}
                for n, i, a, b, r in self.checked
            ],
        }


def grad_check(loss_fn: Callable[[ParamStore], torch.Tensor], params: ParamStore, sample: int = 20,
               eps: float = 1e-5, tol: float = 1e-5, seed: int = 0, atol: float = 1e-7) -> GradCheckReport:
    """Compare autograd against central differences on randomly sampled scalar parameters.

    Relative error is |a - n| / max(|a|, |n|, atol); atol keeps round-off on
    near-zero gradients from dominating.
    """
    params = params.clone()
    _, grads = value_and_grad(loss_fn, params)
    names = params.trainable_names()
    sizes = np.array([params[n].numel() for n in names])
    rng = np.random.default_rng(seed)
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(sample, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    checked = []
    worst = 0.0
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, idx = names[k], int(flat - offsets[k])
        base = params[name]
        values = []
        for delta in (eps, -eps):
            bumped = base.clone()
            bumped.view(-1)[idx] += delta
            params[name] = bumped
            with torch.no_grad():
                val = loss_fn(params)
            check_finite(val, "loss")
            values.append(float(val))
        params[name] = base
        numeric = (values[0] - values[1]) / (2 * eps)
        analytic = float(grads[name].reshape(-1)[idx])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), atol)
        worst = max(worst, rel)
        checked.append((name, idx, analytic, numeric, rel))
    return GradCheckReport(worst, checked, tol)
