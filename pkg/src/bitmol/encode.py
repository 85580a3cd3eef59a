"""Raw structural encodings for the 2D and 3D attention-bias channels.

Everything here is plain numpy on a single graph (or a ligand/pocket pair).
The model turns these integer/float tables into learned biases.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from .molgraph import ComplexRecord, DatasetEntry, Domain, MolecularGraph

D_MAX = 20
DEGREE_CAP = 16


def unreachable_bucket(d_max: int) -> int:
    return d_max + 1


def virtual_bucket(d_max: int) -> int:
    return d_max + 2


class PairDomainClass(enum.IntEnum):
    INTRA_MOL = 0
    INTRA_PROT = 1
    INTER = 2
    VIRTUAL = 3


@dataclass
class StructuralEncoding:
    spd: np.ndarray            # (n, n) int buckets
    edge_paths: list           # edge_paths[i][j] -> tuple of bond orders
    degrees: np.ndarray        # (n,) capped
    distances: np.ndarray | None
    pair_class: np.ndarray     # (n, n) PairDomainClass values

    def to_json(self) -> dict:
        return {
            "spd": self.spd.tolist(),
            "edge_paths": [[list(p) for p in row] for row in self.edge_paths],
            "degrees": self.degrees.tolist(),
            "distances": None if self.distances is None else self.distances.tolist(),
            "pair_class": self.pair_class.tolist(),
        }


def _hop_matrix(graph: MolecularGraph) -> np.ndarray:
    """All-pairs hop counts, inf where unreachable."""
    n = len(graph)
    ba = graph.bond_array
    adj = csr_matrix((np.ones(len(ba)), (ba[:, 0], ba[:, 1])), shape=(n, n))
    return shortest_path(adj, directed=False, unweighted=True)


def spd_matrix(graph: MolecularGraph, d_max: int = D_MAX) -> np.ndarray:
    """Shortest-path buckets: hop count clamped to d_max, UNREACHABLE for disconnected pairs."""
    if d_max < 1:
        raise ValueError("d_max must be >= 1")
    hops = _hop_matrix(graph)
    out = np.where(np.isinf(hops), unreachable_bucket(d_max), np.minimum(np.nan_to_num(hops, posinf=0), d_max))
    return out.astype(np.int64)


def _bond_order_matrix(graph: MolecularGraph) -> np.ndarray:
    n = len(graph)
    m = np.zeros((n, n), dtype=np.int64)
    ba = graph.bond_array
    m[ba[:, 0], ba[:, 1]] = ba[:, 2]
    m[ba[:, 1], ba[:, 0]] = ba[:, 2]
    return m


def next_hop_table(graph: MolecularGraph, hops: np.ndarray | None = None) -> np.ndarray:
    """nxt[i, j]: smallest-index neighbour of i lying on a shortest path to j (-1 if none)."""
    n = len(graph)
    if hops is None:
        hops = _hop_matrix(graph)
    orders = _bond_order_matrix(graph)
    nxt = np.full((n, n), -1, dtype=np.int64)
    for i in range(n):
        nbrs = np.flatnonzero(orders[i])  # ascending
        if nbrs.size == 0:
            continue
        on_path = hops[nbrs, :] == hops[i, :] - 1  # (deg, n)
        has = on_path.any(0)
        nxt[i, has] = nbrs[on_path.argmax(0)[has]]
    return nxt


def edge_path_features(graph: MolecularGraph, d_max: int = D_MAX) -> list:
    """Bond orders along the lexicographically smallest shortest path for every pair.

    Empty for unreachable pairs, self pairs and pairs farther than d_max hops.
    """
    n = len(graph)
    hops = _hop_matrix(graph)
    nxt = next_hop_table(graph, hops)
    orders = _bond_order_matrix(graph)
    paths = [[() for _ in range(n)] for _ in range(n)]
    for i in range(n):
        for j in range(n):
            h = hops[i, j]
            if i == j or np.isinf(h) or h > d_max:
                continue
            seq, cur = [], i
            while cur != j:
                step = nxt[cur, j]
                seq.append(int(orders[cur, step]))
                cur = step
            paths[i][j] = tuple(seq)
    return paths


def edge_path_entries(graph: MolecularGraph, d_max: int = D_MAX) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised form of edge_path_features.

    Returns (entries, lengths): entries is (E, 4) of (i, j, position, bond_order)
    and lengths is the (n, n) path length (0 where no path is used).
    """
    n = len(graph)
    hops = _hop_matrix(graph)
    nxt = next_hop_table(graph, hops)
    orders = _bond_order_matrix(graph)
    usable = np.isfinite(hops) & (hops <= d_max) & ~np.eye(n, dtype=bool)
    lengths = np.where(usable, np.nan_to_num(hops, posinf=0), 0).astype(np.int64)
    ii, jj = np.nonzero(usable)
    cur = ii.copy()
    rows = []
    for pos in range(int(lengths.max(initial=0))):
        alive = lengths[ii, jj] > pos
        if not alive.any():
            break
        a_i, a_j, a_cur = ii[alive], jj[alive], cur[alive]
        step = nxt[a_cur, a_j]
        rows.append(np.stack([a_i, a_j, np.full_like(a_i, pos), orders[a_cur, step]], 1))
        cur[alive] = step
    entries = np.concatenate(rows) if rows else np.zeros((0, 4), dtype=np.int64)
    return entries, lengths


def capped_degrees(graph: MolecularGraph, cap: int = DEGREE_CAP) -> np.ndarray:
    return np.minimum(graph.degrees(), cap)


def pair_distances(coords) -> np.ndarray:
    """Euclidean distance matrix in Angstrom; accepts a graph or an (n, 3) array."""
    if isinstance(coords, MolecularGraph):
        if not coords.has_coords:
            raise ValueError("graph has no coordinates")
        coords = coords.coords
    if coords is None:
        raise ValueError("coordinates missing")
    x = np.asarray(coords, dtype=np.float64)
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt((diff * diff).sum(-1))


def pair_domain_classes(ligand_size: int, pocket_size: int, virtual_slots: int = 0) -> np.ndarray:
    """Class matrix over [virtual slots, ligand atoms, pocket atoms] in that order."""
    if min(ligand_size, pocket_size, virtual_slots) < 0:
        raise ValueError("sizes must be >= 0")
    n = virtual_slots + ligand_size + pocket_size
    side = np.full(n, -1, dtype=np.int64)
    side[virtual_slots:virtual_slots + ligand_size] = 0
    side[virtual_slots + ligand_size:] = 1
    cls = np.full((n, n), int(PairDomainClass.INTER), dtype=np.int64)
    cls[np.ix_(side == 0, side == 0)] = PairDomainClass.INTRA_MOL
    cls[np.ix_(side == 1, side == 1)] = PairDomainClass.INTRA_PROT
    virt = side < 0
    cls[virt, :] = PairDomainClass.VIRTUAL
    cls[:, virt] = PairDomainClass.VIRTUAL
    return cls


def encode_graph(graph: MolecularGraph, d_max: int = D_MAX, degree_cap: int = DEGREE_CAP) -> StructuralEncoding:
    n = len(graph)
    if graph.domain == Domain.MOLECULE:
        cls = pair_domain_classes(n, 0)
    else:
        cls = pair_domain_classes(0, n)
    return StructuralEncoding(
        spd=spd_matrix(graph, d_max),
        edge_paths=edge_path_features(graph, d_max),
        degrees=capped_degrees(graph, degree_cap),
        distances=pair_distances(graph) if graph.has_coords else None,
        pair_class=cls,
    )


def encode_complex(rec: ComplexRecord, d_max: int = D_MAX, degree_cap: int = DEGREE_CAP) -> StructuralEncoding:
    """Ligand atoms first, then pocket atoms; cross pairs are UNREACHABLE with empty paths."""
    nl, npk = len(rec.ligand), len(rec.pocket)
    n = nl + npk
    spd = np.full((n, n), unreachable_bucket(d_max), dtype=np.int64)
    spd[:nl, :nl] = spd_matrix(rec.ligand, d_max)
    spd[nl:, nl:] = spd_matrix(rec.pocket, d_max)
    lp = edge_path_features(rec.ligand, d_max)
    pp = edge_path_features(rec.pocket, d_max)
    paths = [[() for _ in range(n)] for _ in range(n)]
    for i in range(nl):
        paths[i][:nl] = lp[i]
    for i in range(npk):
        paths[nl + i][nl:] = pp[i]
    xyz = np.concatenate([rec.ligand.coords, rec.pocket.coords])
    return StructuralEncoding(
        spd=spd,
        edge_paths=paths,
        degrees=np.concatenate([capped_degrees(rec.ligand, degree_cap), capped_degrees(rec.pocket, degree_cap)]),
        distances=pair_distances(xyz),
        pair_class=pair_domain_classes(nl, npk),
    )


def encode_entry(entry: DatasetEntry, d_max: int = D_MAX, degree_cap: int = DEGREE_CAP) -> StructuralEncoding:
    if entry.kind == "complex":
        return encode_complex(entry.payload, d_max, degree_cap)
    return encode_graph(entry.payload, d_max, degree_cap)


def dump_encoding(entry: DatasetEntry, d_max: int = D_MAX, degree_cap: int = DEGREE_CAP) -> str:
    payload = {"id": entry.id, "kind": entry.kind, **encode_entry(entry, d_max, degree_cap).to_json()}
    return json.dumps(payload, separators=(",", ":"))
