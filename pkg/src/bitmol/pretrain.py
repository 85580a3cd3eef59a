"""Denoising pre-training: corruption, losses, 2D/3D format sampling and the training step."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import torch

from .batch import MASK_ID, Sample, TokenBatch, collate, tokenize
from .model import BitConfig, encoder, noise_head, token_head
from .numcore import (DTYPE, OptState, ParamStore, adamw_step, check_finite, clip_grad_norm, lr_at_step,
                      value_and_grad)

KINDS = ("molecule", "pocket", "complex")
STREAM_IDS = {"molecule": 0, "pocket": 1, "complex": 2}


@dataclass
class CorruptionConfig:
    sigma: float = 0.2
    mask_rate: float = 0.15
    lam: float = 0.2
    p_2d: float = 1 / 3
    p_3d: float = 1 / 3
    p_2d3d: float = 1 / 3
    mask_split: bool = False  # 80/10/10 replacement instead of pure [MASK]

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not 0 < self.mask_rate < 1:
            raise ValueError("mask_rate must lie in (0, 1)")
        probs = (self.p_2d, self.p_3d, self.p_2d3d)
        if min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError(f"format probabilities must be >= 0 and sum to 1, got {probs}")


@dataclass
class PretrainConfig:
    steps: int = 2000
    warmup: int = 120
    peak_lr: float = 2e-4
    weight_decay: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    clip_norm: float = 5.0
    n_molecules: int = 8
    n_pockets: int = 8
    n_complexes: int = 8
    include_molecules: bool = True
    include_pockets: bool = True
    include_complexes: bool = True
    enable_coord_loss: bool = True
    enable_token_loss: bool = True
    # overfit mode: every pool entry keeps one fixed corruption for the whole run
    fixed_corruption: bool = False
    seed: int = 0

    @classmethod
    def large(cls) -> "PretrainConfig":
        return cls(steps=200_000, warmup=12_000, n_molecules=512, n_pockets=512, n_complexes=512)

    def counts(self) -> dict[str, int]:
        return {
            "molecule": self.n_molecules if self.include_molecules else 0,
            "pocket": self.n_pockets if self.include_pockets else 0,
            "complex": self.n_complexes if self.include_complexes else 0,
        }


# ---------------------------------------------------------------------------
# Corruption
# ---------------------------------------------------------------------------

def corrupt_coords(sample: Sample, sigma: float, rng: np.random.Generator):
    """Add sigma * eps to every in-scope atom (ligand atoms only for complexes).

    Returns (new coords, eps of shape (|scope|, 3), scope positions).
    """
    if sample.coords is None:
        raise ValueError(f"sample {sample.id} has no coordinates")
    eps = rng.standard_normal((len(sample.scope), 3))
    coords = sample.coords.copy()
    coords[sample.scope] += sigma * eps
    return coords, eps, sample.scope


def n_masked(n: int, rate: float) -> int:
    return max(1, int(round(rate * n)))


def mask_atoms(sample: Sample, rate: float, rng: np.random.Generator, split: bool = False,
               vocab: int = 119):
    """Choose max(1, round(rate*n)) in-scope atoms and hide their identity.

    Returns (new token ids, masked positions sorted ascending, original ids).
    With split=True the 80/10/10 [MASK]/random/keep rule is used.
    """
    scope = sample.scope
    if len(scope) == 0:
        raise ValueError(f"sample {sample.id} has no maskable atoms")
    m = n_masked(len(scope), rate)
    pos = np.sort(rng.choice(scope, size=m, replace=False))
    tokens = sample.tokens.copy()
    orig = tokens[pos].copy()
    if split:
        u = rng.random(m)
        repl = np.where(u < 0.8, MASK_ID, np.where(u < 0.9, rng.integers(1, vocab, size=m), orig))
        tokens[pos] = repl
    else:
        tokens[pos] = MASK_ID
    return tokens, pos, orig


def sample_format(kind: str, cfg: CorruptionConfig, rng: np.random.Generator) -> tuple[bool, bool]:
    """(has2d, has3d) for one instance; complexes always keep 3D."""
    if kind == "complex":
        return bool(rng.random() < cfg.p_2d3d), True
    k = rng.choice(3, p=[cfg.p_2d, cfg.p_3d, cfg.p_2d3d])
    return (True, False) if k == 0 else (False, True) if k == 1 else (True, True)


@dataclass
class PretrainBatch:
    batch: TokenBatch
    noise: torch.Tensor          # (B, N, 3) eps at corrupted atoms, zero elsewhere
    corrupted: torch.Tensor      # (B, N) bool
    mask_pos: tuple[torch.Tensor, torch.Tensor]
    mask_targets: torch.Tensor   # (M,) original atomic numbers


def make_pretrain_batch(samples: list[Sample], ccfg: CorruptionConfig, rngs: list[np.random.Generator],
                        pad_to: int | None = None) -> PretrainBatch:
    """Format sampling, coordinate corruption and masking; one generator per sample."""
    if len(rngs) != len(samples):
        raise ValueError("need one generator per sample")
    prepared, noise_rows, mask_rows = [], [], []
    for s, rng in zip(samples, rngs):
        has2d, has3d = sample_format(s.kind, ccfg, rng) if s.coords is not None else (True, False)
        s = s.with_format(has2d, has3d)
        eps = scope = None
        if has3d:
            coords, eps, scope = corrupt_coords(s, ccfg.sigma, rng)
            s = Sample(**{**s.__dict__, "coords": coords})
        tokens, pos, orig = mask_atoms(s, ccfg.mask_rate, rng, ccfg.mask_split)
        s = Sample(**{**s.__dict__, "tokens": tokens})
        prepared.append(s)
        noise_rows.append((eps, scope))
        mask_rows.append((pos, orig))
    batch = collate(prepared, pad_to)
    B, N = batch.tokens.shape
    noise = torch.zeros(B, N, 3, dtype=DTYPE)
    corrupted = torch.zeros(B, N, dtype=torch.bool)
    for b, (eps, scope) in enumerate(noise_rows):
        if eps is not None:
            noise[b, scope] = torch.from_numpy(eps)
            corrupted[b, scope] = True
    bi = np.concatenate([np.full(len(p), b) for b, (p, _) in enumerate(mask_rows)])
    ti = np.concatenate([p for p, _ in mask_rows])
    targets = np.concatenate([o for _, o in mask_rows])
    return PretrainBatch(batch, noise, corrupted, (torch.from_numpy(bi), torch.from_numpy(ti)),
                         torch.from_numpy(targets))


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def loss_pos(eps_hat: torch.Tensor, eps: torch.Tensor, corrupted: torch.Tensor) -> torch.Tensor:
    """Per-instance mean of ||eps_hat - eps||^2 over corrupted atoms, averaged over instances
    that have any corrupted atom. Zero when no instance is corrupted."""
    counts = corrupted.sum(1)
    active = counts > 0
    if not bool(active.any()):
        return torch.zeros((), dtype=DTYPE)
    sq = (((eps_hat - eps) ** 2).sum(-1) * corrupted).sum(1)
    per = sq[active] / counts[active].to(DTYPE)
    return per.mean()


def cross_entropy(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    z = logits - logits.amax(-1, keepdim=True).detach()
    logp = z - torch.log(torch.exp(z).sum(-1, keepdim=True))
    return -logp.gather(-1, targets[:, None]).mean()


def loss_atom(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    if logits.shape[0] == 0:
        raise ValueError("no masked positions")
    return cross_entropy(logits, targets)


def combined_loss(l_pos: torch.Tensor, l_atom: torch.Tensor, lam: float) -> torch.Tensor:
    return l_pos + lam * l_atom


def pretrain_losses(pb: PretrainBatch, params: ParamStore, mcfg: BitConfig, ccfg: CorruptionConfig,
                    use_pos: bool = True, use_atom: bool = True):
    """Returns (L, L_pos, L_atom) as tensors; disabled terms are exact zeros."""
    h, attn = encoder(pb.batch, params, mcfg)
    zero = torch.zeros((), dtype=DTYPE)
    l_pos = zero
    if use_pos:
        eps_hat = noise_head(h, pb.batch.coords, attn, pb.batch.is_atom, params)
        l_pos = loss_pos(eps_hat, pb.noise, pb.corrupted)
    l_atom = zero
    if use_atom:
        l_atom = loss_atom(token_head(h, pb.mask_pos, params), pb.mask_targets)
    return combined_loss(l_pos, l_atom, ccfg.lam), l_pos, l_atom


# ---------------------------------------------------------------------------
# Training state and loop
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    params: ParamStore
    opt: OptState
    step: int = 0
    seed: int = 0
    config_digest: str = ""

    def clone(self) -> "TrainState":
        return TrainState(self.params.clone(), self.opt.clone(), self.step, self.seed, self.config_digest)


def step_rng(seed: int, step: int, stream: int) -> np.random.Generator:
    """Independent generator per (seed, step, stream); resuming needs only seed and step."""
    return np.random.default_rng(np.random.SeedSequence([seed, step, stream]))


@dataclass
class Pools:
    """Pre-tokenised training entries per kind."""
    molecule: list[Sample] = field(default_factory=list)
    pocket: list[Sample] = field(default_factory=list)
    complex: list[Sample] = field(default_factory=list)

    @classmethod
    def from_entries(cls, entries, d_max: int, degree_cap: int) -> "Pools":
        pools = cls()
        for e in entries:
            getattr(pools, e.kind).append(tokenize(e, d_max, degree_cap))
        return pools

    def get(self, kind: str) -> list[Sample]:
        return getattr(self, kind)


CORRUPTION_STREAM = 3


def draw_samples(pools: Pools, pcfg: PretrainConfig, step: int) -> tuple[list[Sample], list[np.random.Generator]]:
    """Assemble the mixed batch: exactly counts()[kind] samples per kind, molecules first.

    Also returns the corruption generator of each sample: keyed on (step, slot)
    normally, or on (kind, pool index) when corruption is fixed.
    """
    out, rngs = [], []
    for kind, n in pcfg.counts().items():
        if n == 0:
            continue
        pool = pools.get(kind)
        if not pool:
            raise ValueError(f"no {kind} entries available for a batch needing {n}")
        rng = step_rng(pcfg.seed, step, STREAM_IDS[kind])
        idx = rng.choice(len(pool), size=n, replace=len(pool) < n)
        for i in idx:
            out.append(pool[i])
            if pcfg.fixed_corruption:
                key = [pcfg.seed, CORRUPTION_STREAM, STREAM_IDS[kind], int(i)]
            else:
                key = [pcfg.seed, step, CORRUPTION_STREAM, len(rngs)]
            rngs.append(np.random.default_rng(np.random.SeedSequence(key)))
    return out, rngs


def pretrain_step(state: TrainState, pools: Pools, mcfg: BitConfig, ccfg: CorruptionConfig,
                  pcfg: PretrainConfig) -> tuple[TrainState, dict]:
    """One AdamW step on L = L_pos + lam * L_atom; returns the new state and a log record."""
    samples, rngs = draw_samples(pools, pcfg, state.step)
    pb = make_pretrain_batch(samples, ccfg, rngs)
    parts = {}

    def loss_fn(p):
        total, lp, la = pretrain_losses(pb, p, mcfg, ccfg, pcfg.enable_coord_loss, pcfg.enable_token_loss)
        parts["l_pos"], parts["l_atom"] = float(lp.detach()), float(la.detach())
        return total

    loss, grads = value_and_grad(loss_fn, state.params)
    clip_grad_norm(grads, pcfg.clip_norm)
    lr = lr_at_step(state.step + 1, pcfg.warmup, pcfg.steps, pcfg.peak_lr)
    adamw_step(state.params, grads, state.opt, lr, pcfg.betas, pcfg.eps, pcfg.weight_decay)
    record = {"step": state.step, "lr": lr, "l_pos": parts["l_pos"], "l_atom": parts["l_atom"],
              "l_total": float(loss)}
    state.step += 1
    return state, record


def evaluate_loss(state: TrainState, pools: Pools, mcfg: BitConfig, ccfg: CorruptionConfig,
                  pcfg: PretrainConfig, step: int | None = None) -> dict:
    """Loss on the batch a given step would draw, without updating parameters."""
    step = state.step if step is None else step
    samples, rngs = draw_samples(pools, pcfg, step)
    pb = make_pretrain_batch(samples, ccfg, rngs)
    with torch.no_grad():
        total, lp, la = pretrain_losses(pb, state.params, mcfg, ccfg, pcfg.enable_coord_loss, pcfg.enable_token_loss)
    return {"l_pos": float(lp), "l_atom": float(la), "l_total": float(check_finite(total, "loss"))}


def run_pretraining(state: TrainState, pools: Pools, mcfg: BitConfig, ccfg: CorruptionConfig,
                    pcfg: PretrainConfig, n_steps: int, log_file=None, on_step=None) -> list[dict]:
    records = []
    for _ in range(n_steps):
        state, rec = pretrain_step(state, pools, mcfg, ccfg, pcfg)
        records.append(rec)
        if log_file is not None:
            log_file.write(json.dumps(rec) + "\n")
        if on_step is not None:
            on_step(state, rec)
    return records


def config_from_dict(cls, d: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise KeyError(f"unknown keys: {sorted(unknown)}")
    if "betas" in d:
        d = {**d, "betas": tuple(d["betas"])}
    return cls(**d)


def to_dict(cfg) -> dict:
    out = asdict(cfg)
    if "betas" in out:
        out["betas"] = list(out["betas"])
    return out


def expected_initial_atom_loss(vocab: int) -> float:
    return math.log(vocab)
