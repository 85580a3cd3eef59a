"""The BIT network as pure functions over a ParamStore.

Attention is shared across domains; each block has a molecule and a protein
feed-forward expert chosen by the token's domain tag (MoDE). Pair biases come
from per-domain 2D experts and intra/inter 3D experts (MoSE).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch

from .batch import ATOM_CLASSES, N_TOKEN_IDS, TokenBatch
from .encode import DEGREE_CAP, D_MAX, PairDomainClass
from .molgraph import Domain
from .numcore import DTYPE, ParamStore, dropout, gelu, layer_norm

INTRA_MOL = int(PairDomainClass.INTRA_MOL)
INTRA_PROT = int(PairDomainClass.INTRA_PROT)
INTER = int(PairDomainClass.INTER)
VIRTUAL = int(PairDomainClass.VIRTUAL)
N_BOND_TYPES = 5  # 0 unused, 1..4 bond orders
DISTANCE_RANGE = 12.0


@dataclass
class BitConfig:
    layers: int = 4
    hidden_size: int = 64
    heads: int = 8
    ffn_mult: int = 4
    atom_vocab: int = ATOM_CLASSES
    degree_cap: int = DEGREE_CAP
    d_max: int = D_MAX
    gaussian_kernels: int = 32
    retrieval_dim: int = 64
    emb_dropout: float = 0.0
    attn_dropout: float = 0.0
    act_dropout: float = 0.0
    enable_2d: bool = True
    enable_3d: bool = True
    enable_mode: bool = True
    enable_mose: bool = True
    init_std: float = 0.05

    def __post_init__(self):
        if self.hidden_size % self.heads:
            raise ValueError("hidden_size must be divisible by heads")
        if self.gaussian_kernels < 1:
            raise ValueError("gaussian_kernels must be >= 1")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")

    @classmethod
    def large(cls) -> "BitConfig":
        return cls(layers=12, hidden_size=768, heads=32, gaussian_kernels=128, retrieval_dim=768)

    @classmethod
    def tiny(cls) -> "BitConfig":
        return cls(layers=2, hidden_size=32, heads=4, ffn_mult=2, gaussian_kernels=8, retrieval_dim=16)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BitConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown model keys: {sorted(unknown)}")
        return cls(**d)


def init_params(cfg: BitConfig, seed: int = 0) -> ParamStore:
    rng = np.random.default_rng(seed)
    d, H, K = cfg.hidden_size, cfg.heads, cfg.gaussian_kernels
    p: dict[str, np.ndarray] = {}

    def normal(*shape):
        return rng.normal(0.0, cfg.init_std, size=shape)

    p["embed.atom"] = normal(N_TOKEN_IDS, d)
    p["embed.degree"] = normal(cfg.degree_cap + 2, d)
    p["embed.domain"] = normal(2, d)
    for dom in ("mol", "pocket"):
        p[f"bias2d.{dom}.spd"] = normal(cfg.d_max + 3, H)
        p[f"bias2d.{dom}.bond"] = normal(N_BOND_TYPES, H)
        p[f"bias2d.{dom}.edge_w"] = normal(cfg.d_max, H, H)
    p["bias2d.inter"] = normal(H)
    p["bias2d.virtual"] = normal(H)
    for exp in ("intra", "inter"):
        p[f"bias3d.{exp}.mean"] = np.linspace(0.0, DISTANCE_RANGE, K)
        p[f"bias3d.{exp}.width"] = np.full(K, DISTANCE_RANGE / max(K - 1, 1))
        p[f"bias3d.{exp}.proj"] = normal(K, H)
    for layer in range(cfg.layers):
        pre = f"block{layer}"
        for w in ("q", "k", "v", "o"):
            p[f"{pre}.attn.w{w}"] = normal(d, d)
            p[f"{pre}.attn.b{w}"] = np.zeros(d)
        for ln in ("ln1", "ln2"):
            p[f"{pre}.{ln}.scale"] = np.ones(d)
            p[f"{pre}.{ln}.shift"] = np.zeros(d)
        for dom in ("mol", "pocket"):
            p[f"{pre}.ffn.{dom}.w1"] = normal(d, d * cfg.ffn_mult)
            p[f"{pre}.ffn.{dom}.b1"] = np.zeros(d * cfg.ffn_mult)
            p[f"{pre}.ffn.{dom}.w2"] = normal(d * cfg.ffn_mult, d)
            p[f"{pre}.ffn.{dom}.b2"] = np.zeros(d)
    p["head.noise.w1"] = normal(d, d)
    p["head.noise.w2"] = normal(d, 1)
    p["head.token.w"] = normal(d, d)
    p["head.token.b"] = np.zeros(d)
    p["head.token.ln.scale"] = np.ones(d)
    p["head.token.ln.shift"] = np.zeros(d)
    p["head.token.out_w"] = normal(d, cfg.atom_vocab)
    p["head.token.out_b"] = np.zeros(cfg.atom_vocab)
    p["head.retr.ligand"] = normal(d, cfg.retrieval_dim)
    p["head.retr.pocket"] = normal(d, cfg.retrieval_dim)
    p["head.affinity.w1"] = normal(d, d)
    p["head.affinity.b1"] = np.zeros(d)
    p["head.affinity.w2"] = normal(d, 1)
    p["head.affinity.b2"] = np.zeros(1)
    p["head.classify.w"] = normal(d, 1)
    p["head.classify.b"] = np.zeros(1)
    return ParamStore({k: torch.from_numpy(np.ascontiguousarray(v)).to(DTYPE) for k, v in p.items()})


# ---------------------------------------------------------------------------
# Embedding and biases
# ---------------------------------------------------------------------------

def embed_batch(batch: TokenBatch, params: ParamStore, cfg: BitConfig,
                generator: torch.Generator | None = None) -> torch.Tensor:
    """H0 = atom embedding + degree embedding + domain embedding (padding rows zeroed)."""
    if int(batch.tokens.max()) >= params["embed.atom"].shape[0]:
        raise ValueError("token id outside the embedding vocabulary")
    h = params["embed.atom"][batch.tokens] + params["embed.degree"][batch.degree] + params["embed.domain"][batch.domain]
    h = h * batch.real[..., None]
    return dropout(h, cfg.emb_dropout, generator)


def gaussian_basis(dist: torch.Tensor, mean: torch.Tensor, width: torch.Tensor) -> torch.Tensor:
    sigma = width.abs() + 1e-3
    z = (dist[..., None] - mean) / sigma
    return torch.exp(-0.5 * z * z) / (math.sqrt(2 * math.pi) * sigma)


def pair_distance_tensor(coords: torch.Tensor) -> torch.Tensor:
    diff = coords[:, :, None, :] - coords[:, None, :, :]
    return torch.sqrt((diff * diff).sum(-1))


def _bias_2d(batch: TokenBatch, params: ParamStore, cfg: BitConfig) -> torch.Tensor:
    B, N = batch.tokens.shape
    H = cfg.heads
    cls = batch.pair_class
    pocket_key = "pocket" if cfg.enable_mose else "mol"
    spd_mol = params["bias2d.mol.spd"][batch.spd]
    spd_poc = params[f"bias2d.{pocket_key}.spd"][batch.spd]
    out = torch.where((cls == INTRA_MOL)[..., None], spd_mol, torch.zeros((), dtype=DTYPE))
    out = torch.where((cls == INTRA_PROT)[..., None], spd_poc, out)

    if batch.edge_flat.numel():
        flat_cls = cls.reshape(-1)[batch.edge_flat]
        edge_sum = torch.zeros(B * N * N, H, dtype=DTYPE)
        for key, sel in (("mol", flat_cls == INTRA_MOL), (pocket_key, flat_cls == INTRA_PROT)):
            if not bool(sel.any()):
                continue
            bond = params[f"bias2d.{key}.bond"][batch.edge_order[sel]]          # (E, H)
            weight = params[f"bias2d.{key}.edge_w"][batch.edge_pos[sel]]       # (E, H, H)
            edge_sum = edge_sum.index_add(0, batch.edge_flat[sel], torch.einsum("eh,ehk->ek", bond, weight))
        length = batch.path_len.clamp(min=1).to(DTYPE)[..., None]
        out = out + edge_sum.view(B, N, N, H) / length

    out = torch.where((cls == INTER)[..., None], params["bias2d.inter"], out)
    out = torch.where((cls == VIRTUAL)[..., None], params["bias2d.virtual"], out)
    return out


def _bias_3d(batch: TokenBatch, params: ParamStore, cfg: BitConfig) -> torch.Tensor:
    cls = batch.pair_class
    dist = pair_distance_tensor(batch.coords)

    def expert(name):
        phi = gaussian_basis(dist, params[f"bias3d.{name}.mean"], params[f"bias3d.{name}.width"])
        return phi @ params[f"bias3d.{name}.proj"]

    intra = expert("intra")
    zero = torch.zeros((), dtype=DTYPE)
    out = torch.where(((cls == INTRA_MOL) | (cls == INTRA_PROT))[..., None], intra, zero)
    inter_mask = cls == INTER
    if bool(inter_mask.any()):
        inter = expert("inter") if cfg.enable_mose else intra
        out = torch.where(inter_mask[..., None], inter, out)
    return out


def build_attention_bias(batch: TokenBatch, params: ParamStore, cfg: BitConfig) -> torch.Tensor:
    """(B, heads, N, N) additive bias; -inf on padding keys."""
    B, N = batch.tokens.shape
    bias = torch.zeros(B, N, N, cfg.heads, dtype=DTYPE)
    use2d = batch.has2d & cfg.enable_2d
    use3d = batch.has3d & cfg.enable_3d
    if bool(use2d.any()):
        bias = bias + torch.where(use2d[:, None, None, None], _bias_2d(batch, params, cfg), torch.zeros((), dtype=DTYPE))
    if bool(use3d.any()):
        bias = bias + torch.where(use3d[:, None, None, None], _bias_3d(batch, params, cfg), torch.zeros((), dtype=DTYPE))
    bias = bias.permute(0, 3, 1, 2)
    return bias.masked_fill(~batch.real[:, None, None, :], float("-inf"))


# ---------------------------------------------------------------------------
# Transformer block
# ---------------------------------------------------------------------------

def attention(h: torch.Tensor, bias: torch.Tensor, params: ParamStore, pre: str, cfg: BitConfig,
              generator: torch.Generator | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    B, N, d = h.shape
    H = cfg.heads
    dk = d // H

    def proj(w):
        x = h @ params[f"{pre}.attn.w{w}"] + params[f"{pre}.attn.b{w}"]
        return x.view(B, N, H, dk).transpose(1, 2)

    q, k, v = proj("q"), proj("k"), proj("v")
    scores = q @ k.transpose(-1, -2) / math.sqrt(dk) + bias
    scores = scores - scores.amax(-1, keepdim=True).detach()
    e = torch.exp(scores)
    attn = e / e.sum(-1, keepdim=True)
    ctx = dropout(attn, cfg.attn_dropout, generator) @ v
    ctx = ctx.transpose(1, 2).reshape(B, N, d)
    return ctx @ params[f"{pre}.attn.wo"] + params[f"{pre}.attn.bo"], attn


def ffn_expert(x: torch.Tensor, params: ParamStore, pre: str, cfg: BitConfig,
               generator: torch.Generator | None = None) -> torch.Tensor:
    hid = gelu(x @ params[f"{pre}.w1"] + params[f"{pre}.b1"])
    hid = dropout(hid, cfg.act_dropout, generator)
    return hid @ params[f"{pre}.w2"] + params[f"{pre}.b2"]


def mode_ffn(h: torch.Tensor, domain: torch.Tensor, params: ParamStore, layer: int, cfg: BitConfig,
             generator: torch.Generator | None = None) -> torch.Tensor:
    """Route every token to its domain expert; MOLECULE rows never touch protein weights."""
    pre = f"block{layer}.ffn"
    if not cfg.enable_mode:
        return ffn_expert(h, params, f"{pre}.mol", cfg, generator)
    flat = h.reshape(-1, h.shape[-1])
    dom = domain.reshape(-1)
    out = torch.zeros_like(flat)
    for key, value in (("mol", Domain.MOLECULE), ("pocket", Domain.POCKET)):
        idx = torch.nonzero(dom == int(value)).squeeze(1)
        if idx.numel():
            out = out.index_copy(0, idx, ffn_expert(flat[idx], params, f"{pre}.{key}", cfg, generator))
    return out.view_as(h)


def transformer_block_forward(h: torch.Tensor, bias: torch.Tensor, batch: TokenBatch, params: ParamStore,
                              layer: int, cfg: BitConfig, generator: torch.Generator | None = None):
    """Post-LN block: H' = LN(MSA(H) + H); H_out = LN(MoDE-FFN(H') + H'). Returns (H_out, attention)."""
    pre = f"block{layer}"
    a, attn = attention(h, bias, params, pre, cfg, generator)
    h1 = layer_norm(a + h, params[f"{pre}.ln1.scale"], params[f"{pre}.ln1.shift"])
    f = mode_ffn(h1, batch.domain, params, layer, cfg, generator)
    h2 = layer_norm(f + h1, params[f"{pre}.ln2.scale"], params[f"{pre}.ln2.shift"])
    return h2, attn


def encoder(batch: TokenBatch, params: ParamStore, cfg: BitConfig,
            generator: torch.Generator | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Run all blocks; returns (H_L, last-block attention averaged over heads)."""
    h = embed_batch(batch, params, cfg, generator)
    bias = build_attention_bias(batch, params, cfg)
    attn = None
    for layer in range(cfg.layers):
        h, attn = transformer_block_forward(h, bias, batch, params, layer, cfg, generator)
    return h, attn.mean(1)


# ---------------------------------------------------------------------------
# Heads
# ---------------------------------------------------------------------------

MODES = ("fusion", "dual_pocket", "dual_ligand", "unimodal")


def forward_encode(batch: TokenBatch, params: ParamStore, cfg: BitConfig, mode: str,
                   generator: torch.Generator | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Pooled vector per sample plus the final token matrix.

    fusion/unimodal read the [M_VNode] row; dual modes project the relevant
    virtual-node row into the retrieval space and unit-normalise it.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    want = {"fusion": "complex", "unimodal": "molecule", "dual_ligand": "molecule", "dual_pocket": "pocket"}[mode]
    if any(k != want for k in batch.kinds):
        raise ValueError(f"mode {mode!r} expects {want} samples, got {sorted(set(batch.kinds))}")
    if mode == "dual_ligand" and bool(batch.has3d.any()):
        raise ValueError("dual_ligand encodes 2D graphs only; clear the 3D flag")
    if mode == "dual_pocket" and not bool(batch.has3d.all()):
        raise ValueError("dual_pocket requires 3D pockets")
    h, _ = encoder(batch, params, cfg, generator)
    rows = torch.arange(batch.size)
    if mode == "dual_pocket":
        vec = h[rows, batch.p_vnode] @ params["head.retr.pocket"]
    else:
        vec = h[rows, batch.m_vnode]
        if mode == "dual_ligand":
            vec = vec @ params["head.retr.ligand"]
    if mode.startswith("dual"):
        vec = vec / torch.sqrt((vec * vec).sum(-1, keepdim=True))
    return vec, h


def direction_vectors(coords: torch.Tensor, atom_mask: torch.Tensor) -> torch.Tensor:
    """Unit vectors (r_i - r_j)/|r_i - r_j| between atoms; zero on the diagonal, for
    coincident atoms (< 1e-8 apart) and wherever a virtual/padding slot is involved."""
    diff = coords[:, :, None, :] - coords[:, None, :, :]
    dist = torch.sqrt((diff * diff).sum(-1))
    valid = (dist >= 1e-8) & atom_mask[:, :, None] & atom_mask[:, None, :]
    safe = torch.where(valid, dist, torch.ones((), dtype=DTYPE))
    return torch.where(valid[..., None], diff / safe[..., None], torch.zeros((), dtype=DTYPE))


def noise_head(h: torch.Tensor, coords: torch.Tensor, attn: torch.Tensor, atom_mask: torch.Tensor,
               params: ParamStore) -> torch.Tensor:
    """Equivariant noise prediction: eps_i = sum_j a_ij * delta_ij * (x_j W1 W2).

    Returns (B, N, 3); rows for virtual and padding slots are zero.
    """
    s = (h @ params["head.noise.w1"]) @ params["head.noise.w2"]  # (B, N, 1)
    delta = direction_vectors(coords, atom_mask)
    eps = torch.einsum("bij,bijk,bj->bik", attn, delta, s[..., 0])
    return eps * atom_mask[..., None]


def token_head(h: torch.Tensor, positions: tuple[torch.Tensor, torch.Tensor], params: ParamStore) -> torch.Tensor:
    """Logits over atomic numbers at the given (batch, token) positions."""
    x = h[positions]
    x = gelu(x @ params["head.token.w"] + params["head.token.b"])
    x = layer_norm(x, params["head.token.ln.scale"], params["head.token.ln.shift"])
    return x @ params["head.token.out_w"] + params["head.token.out_b"]


def affinity_head(vec: torch.Tensor, params: ParamStore) -> torch.Tensor:
    """Two-layer regression head (hidden -> hidden -> 1, GELU in between)."""
    hid = gelu(vec @ params["head.affinity.w1"] + params["head.affinity.b1"])
    return (hid @ params["head.affinity.w2"] + params["head.affinity.b2"])[:, 0]


def classify_logit(vec: torch.Tensor, params: ParamStore) -> torch.Tensor:
    return (vec @ params["head.classify.w"] + params["head.classify.b"])[:, 0]
