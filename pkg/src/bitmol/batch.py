"""Tokenisation of dataset entries and padding into model batches.

Token layout per sample: molecules are ``[M_VNode] atoms``, pockets are
``[P_VNode] atoms`` and complexes are ``[M_VNode] ligand [P_VNode] pocket``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch

from .encode import (DEGREE_CAP, D_MAX, PairDomainClass, capped_degrees, edge_path_entries,
                     spd_matrix, unreachable_bucket, virtual_bucket)
from .molgraph import DatasetEntry, Domain, MolecularGraph, extract_pocket
from .numcore import DTYPE

PAD_ID = 0
MASK_ID = 119
M_VNODE_ID = 120
P_VNODE_ID = 121
N_TOKEN_IDS = 122
# masked-token targets are atomic numbers 0..118
ATOM_CLASSES = 119


@dataclass
class Sample:
    id: str
    kind: str
    tokens: np.ndarray        # (n,)
    domain: np.ndarray        # (n,) Domain value per token
    degree: np.ndarray        # (n,) capped degree, cap + 1 for virtual nodes
    is_atom: np.ndarray       # (n,) bool
    coords: np.ndarray | None  # (n, 3), zero rows at virtual nodes
    spd: np.ndarray           # (n, n)
    pair_class: np.ndarray    # (n, n)
    edges: np.ndarray         # (E, 4) token i, token j, position, bond order
    path_len: np.ndarray      # (n, n)
    m_vnode: int
    p_vnode: int
    scope: np.ndarray         # token positions open to corruption (ligand atoms for complexes)
    has2d: bool = True
    has3d: bool = False

    def __len__(self) -> int:
        return len(self.tokens)

    def with_format(self, has2d: bool, has3d: bool) -> "Sample":
        if has3d and self.coords is None:
            raise ValueError(f"sample {self.id}: 3D channel requested without coordinates")
        if not (has2d or has3d):
            raise ValueError("at least one structural channel must be active")
        return replace(self, has2d=has2d, has3d=has3d)


def _segment(graph: MolecularGraph, d_max: int, degree_cap: int):
    spd = spd_matrix(graph, d_max)
    edges, lengths = edge_path_entries(graph, d_max)
    return spd, edges, lengths, capped_degrees(graph, degree_cap)


def tokenize(entry: DatasetEntry, d_max: int = D_MAX, degree_cap: int = DEGREE_CAP,
             pocket_cutoff: float | None = 5.0) -> Sample:
    """Build the token-level view of an entry; complexes get their pocket cut at pocket_cutoff."""
    if entry.kind == "complex":
        rec = entry.payload
        pocket = rec.pocket if pocket_cutoff is None else extract_pocket(rec.pocket, rec.ligand, pocket_cutoff)
        parts = [(rec.ligand, Domain.MOLECULE), (pocket, Domain.POCKET)]
    else:
        parts = [(entry.payload, entry.payload.domain)]

    n = sum(len(g) + 1 for g, _ in parts)
    tokens = np.zeros(n, dtype=np.int64)
    domain = np.zeros(n, dtype=np.int64)
    degree = np.full(n, degree_cap + 1, dtype=np.int64)
    is_atom = np.zeros(n, dtype=bool)
    side = np.full(n, -1, dtype=np.int64)
    spd = np.full((n, n), virtual_bucket(d_max), dtype=np.int64)
    path_len = np.zeros((n, n), dtype=np.int64)
    has_xyz = all(g.has_coords for g, _ in parts)
    coords = np.zeros((n, 3)) if has_xyz else None
    edges = []
    m_vnode = p_vnode = -1
    atom_slices = []
    start = 0
    for graph, dom in parts:
        vn = start
        tokens[vn] = M_VNODE_ID if dom == Domain.MOLECULE else P_VNODE_ID
        domain[vn] = dom
        if dom == Domain.MOLECULE:
            m_vnode = vn
        else:
            p_vnode = vn
        a0, a1 = vn + 1, vn + 1 + len(graph)
        atom_slices.append((a0, a1))
        tokens[a0:a1] = graph.elements
        domain[a0:a1] = dom
        is_atom[a0:a1] = True
        side[a0:a1] = int(dom)
        g_spd, g_edges, g_len, g_deg = _segment(graph, d_max, degree_cap)
        degree[a0:a1] = g_deg
        spd[a0:a1, a0:a1] = g_spd
        path_len[a0:a1, a0:a1] = g_len
        if len(g_edges):
            e = g_edges.copy()
            e[:, :2] += a0
            edges.append(e)
        if has_xyz:
            coords[a0:a1] = graph.coords
        start = a1
    if len(parts) == 2:
        (l0, l1), (p0, p1) = atom_slices
        spd[l0:l1, p0:p1] = unreachable_bucket(d_max)
        spd[p0:p1, l0:l1] = unreachable_bucket(d_max)

    cls = np.full((n, n), int(PairDomainClass.INTER), dtype=np.int64)
    cls[np.ix_(side == 0, side == 0)] = PairDomainClass.INTRA_MOL
    cls[np.ix_(side == 1, side == 1)] = PairDomainClass.INTRA_PROT
    cls[side < 0, :] = PairDomainClass.VIRTUAL
    cls[:, side < 0] = PairDomainClass.VIRTUAL

    scope = np.arange(*atom_slices[0]) if entry.kind == "complex" else np.flatnonzero(is_atom)
    return Sample(
        id=entry.id, kind=entry.kind, tokens=tokens, domain=domain, degree=degree, is_atom=is_atom,
        coords=coords, spd=spd, pair_class=cls,
        edges=np.concatenate(edges) if edges else np.zeros((0, 4), dtype=np.int64),
        path_len=path_len, m_vnode=m_vnode, p_vnode=p_vnode, scope=scope,
        has2d=True, has3d=has_xyz,
    )


@dataclass
class TokenBatch:
    tokens: torch.Tensor      # (B, N) long
    domain: torch.Tensor      # (B, N) long
    degree: torch.Tensor      # (B, N) long
    real: torch.Tensor        # (B, N) bool, False at padding
    is_atom: torch.Tensor     # (B, N) bool
    coords: torch.Tensor      # (B, N, 3)
    spd: torch.Tensor         # (B, N, N) long
    pair_class: torch.Tensor  # (B, N, N) long
    edge_flat: torch.Tensor   # (E,) index into B*N*N
    edge_pos: torch.Tensor    # (E,)
    edge_order: torch.Tensor  # (E,)
    path_len: torch.Tensor    # (B, N, N) long
    has2d: torch.Tensor       # (B,) bool
    has3d: torch.Tensor       # (B,) bool
    m_vnode: torch.Tensor     # (B,) long, -1 when absent
    p_vnode: torch.Tensor     # (B,) long, -1 when absent
    kinds: tuple[str, ...]
    ids: tuple[str, ...]

    @property
    def size(self) -> int:
        return self.tokens.shape[0]

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[1]


def collate(samples: list[Sample], pad_to: int | None = None, d_max: int = D_MAX) -> TokenBatch:
    if not samples:
        raise ValueError("empty batch")
    B = len(samples)
    N = max(len(s) for s in samples)
    if pad_to is not None:
        if pad_to < N:
            raise ValueError(f"pad_to={pad_to} shorter than longest sample ({N})")
        N = pad_to
    tokens = np.full((B, N), PAD_ID, dtype=np.int64)
    domain = np.zeros((B, N), dtype=np.int64)
    degree = np.zeros((B, N), dtype=np.int64)
    real = np.zeros((B, N), dtype=bool)
    is_atom = np.zeros((B, N), dtype=bool)
    coords = np.zeros((B, N, 3))
    spd = np.full((B, N, N), unreachable_bucket(d_max), dtype=np.int64)
    cls = np.full((B, N, N), int(PairDomainClass.VIRTUAL), dtype=np.int64)
    path_len = np.zeros((B, N, N), dtype=np.int64)
    e_flat, e_pos, e_ord = [], [], []
    for b, s in enumerate(samples):
        n = len(s)
        tokens[b, :n] = s.tokens
        domain[b, :n] = s.domain
        degree[b, :n] = s.degree
        real[b, :n] = True
        is_atom[b, :n] = s.is_atom
        if s.coords is not None and s.has3d:
            coords[b, :n] = s.coords
        spd[b, :n, :n] = s.spd
        cls[b, :n, :n] = s.pair_class
        path_len[b, :n, :n] = s.path_len
        if s.has2d and len(s.edges):
            e_flat.append(b * N * N + s.edges[:, 0] * N + s.edges[:, 1])
            e_pos.append(s.edges[:, 2])
            e_ord.append(s.edges[:, 3])

    def cat(parts):
        return torch.from_numpy(np.concatenate(parts)) if parts else torch.zeros(0, dtype=torch.long)

    return TokenBatch(
        tokens=torch.from_numpy(tokens), domain=torch.from_numpy(domain), degree=torch.from_numpy(degree),
        real=torch.from_numpy(real), is_atom=torch.from_numpy(is_atom),
        coords=torch.from_numpy(coords).to(DTYPE), spd=torch.from_numpy(spd), pair_class=torch.from_numpy(cls),
        edge_flat=cat(e_flat), edge_pos=cat(e_pos), edge_order=cat(e_ord), path_len=torch.from_numpy(path_len),
        has2d=torch.tensor([s.has2d for s in samples]), has3d=torch.tensor([s.has3d for s in samples]),
        m_vnode=torch.tensor([s.m_vnode for s in samples]), p_vnode=torch.tensor([s.p_vnode for s in samples]),
        kinds=tuple(s.kind for s in samples), ids=tuple(s.id for s in samples),
    )
