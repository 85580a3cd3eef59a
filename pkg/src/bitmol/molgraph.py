"""Molecular graph data model, JSONL ingestion, pocket extraction and synthetic data.

Graphs are plain atom/bond lists with an explicit domain tag. Coordinates are
optional but all-or-none per graph. The synthetic generator stands in for the
large molecule/pocket/complex corpora and is fully deterministic given a seed.
"""

from __future__ import annotations

import enum
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAX_ELEMENT = 118
DEFAULT_MAX_ATOMS = 256


class Domain(enum.IntEnum):
    MOLECULE = 0
    POCKET = 1


class BondOrder(enum.IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4


class GraphError(ValueError):
    """Raised when a graph, record or dataset line violates the data model."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class EmptyPocket(GraphError):
    pass


@dataclass(frozen=True)
class Atom:
    element: int
    coords: tuple[float, float, float] | None = None

    def __post_init__(self):
        if not isinstance(self.element, (int, np.integer)) or not 1 <= self.element <= MAX_ELEMENT:
            raise GraphError(f"element {self.element!r} outside 1..{MAX_ELEMENT}")
        if self.coords is not None:
            if len(self.coords) != 3 or not all(math.isfinite(c) for c in self.coords):
                raise GraphError(f"coordinates must be 3 finite floats, got {self.coords!r}")


@dataclass(frozen=True)
class Bond:
    i: int
    j: int
    order: BondOrder = BondOrder.SINGLE


@dataclass(frozen=True, eq=False)
class MolecularGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    domain: Domain = Domain.MOLECULE
    family: int | None = None
    max_atoms: int = field(default=DEFAULT_MAX_ATOMS, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        object.__setattr__(self, "bonds", tuple(self.bonds))
        n = len(self.atoms)
        if not 1 <= n <= self.max_atoms:
            raise GraphError(f"atom count {n} outside 1..{self.max_atoms}")
        with_xyz = sum(a.coords is not None for a in self.atoms)
        if with_xyz not in (0, n):
            raise GraphError("coordinates must be given for all atoms or none")
        seen = set()
        for b in self.bonds:
            if not (0 <= b.i < n and 0 <= b.j < n):
                raise GraphError(f"bond index out of range: ({b.i}, {b.j}) with {n} atoms")
            if b.i == b.j:
                raise GraphError(f"self bond on atom {b.i}")
            key = (min(b.i, b.j), max(b.i, b.j))
            if key in seen:
                raise GraphError(f"duplicate bond {key}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.atoms)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MolecularGraph):
            return NotImplemented
        return (self.atoms, self.bonds, self.domain, self.family) == (
            other.atoms, other.bonds, other.domain, other.family)

    __hash__ = None

    @property
    def has_coords(self) -> bool:
        return self.atoms[0].coords is not None

    @cached_property
    def elements(self) -> np.ndarray:
        return np.array([a.element for a in self.atoms], dtype=np.int64)

    @cached_property
    def coords(self) -> np.ndarray | None:
        if not self.has_coords:
            return None
        xyz = np.array([a.coords for a in self.atoms], dtype=np.float64)
        xyz.flags.writeable = False
        return xyz

    @cached_property
    def bond_array(self) -> np.ndarray:
        """(n_bonds, 3) integer array of (i, j, order)."""
        if not self.bonds:
            return np.zeros((0, 3), dtype=np.int64)
        return np.array([(b.i, b.j, int(b.order)) for b in self.bonds], dtype=np.int64)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(len(self), dtype=np.int64)
        ba = self.bond_array
        np.add.at(deg, ba[:, 0], 1)
        np.add.at(deg, ba[:, 1], 1)
        return deg


@dataclass(frozen=True, eq=False)
class ComplexRecord:
    ligand: MolecularGraph
    pocket: MolecularGraph
    affinity: float | None = None
    active: bool | None = None

    def __post_init__(self):
        if self.ligand.domain != Domain.MOLECULE or self.pocket.domain != Domain.POCKET:
            raise GraphError("complex needs a MOLECULE ligand and a POCKET pocket")
        if not (self.ligand.has_coords and self.pocket.has_coords):
            raise GraphError("complex ligand and pocket both require 3D coordinates")

    def __eq__(self, other) -> bool:
        if not isinstance(other, ComplexRecord):
            return NotImplemented
        return (self.ligand, self.pocket, self.affinity, self.active) == (
            other.ligand, other.pocket, other.affinity, other.active)

    __hash__ = None


KINDS = ("molecule", "pocket", "complex")


@dataclass(frozen=True, eq=False)
class DatasetEntry:
    kind: str
    payload: MolecularGraph | ComplexRecord
    id: str
    # binary label for single-molecule classification sets
    active: bool | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GraphError(f"unknown kind {self.kind!r}")
        if self.kind == "complex":
            ok = isinstance(self.payload, ComplexRecord)
        else:
            want = Domain.MOLECULE if self.kind == "molecule" else Domain.POCKET
            ok = isinstance(self.payload, MolecularGraph) and self.payload.domain == want
        if not ok:
            raise GraphError(f"payload does not match kind {self.kind!r}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, DatasetEntry):
            return NotImplemented
        return (self.kind, self.payload, self.id, self.active) == (
            other.kind, other.payload, other.id, other.active)

    __hash__ = None


# ---------------------------------------------------------------------------
# JSONL reading / writing
# ---------------------------------------------------------------------------

def _graph_from_obj(obj: dict, domain: Domain, need_coords: bool, max_atoms: int) -> MolecularGraph:
    if not isinstance(obj, dict):
        raise GraphError("graph must be a JSON object")
    raw_atoms = obj.get("atoms")
    if not isinstance(raw_atoms, list) or not raw_atoms:
        raise GraphError("'atoms' must be a non-empty list")
    atoms = []
    for a in raw_atoms:
        if not isinstance(a, dict) or "z" not in a:
            raise GraphError("atom objects need an integer 'z'")
        z = a["z"]
        if isinstance(z, bool) or not isinstance(z, int):
            raise GraphError(f"atomic number must be an integer, got {z!r}")
        xyz = a.get("xyz")
        if xyz is not None:
            if not isinstance(xyz, list) or len(xyz) != 3:
                raise GraphError("'xyz' must be a list of 3 numbers")
            xyz = tuple(float(c) for c in xyz)
        atoms.append(Atom(z, xyz))
    bonds = []
    for b in obj.get("bonds", []):
        if not isinstance(b, list) or len(b) != 3 or not all(isinstance(v, int) for v in b):
            raise GraphError(f"bond must be [i, j, order], got {b!r}")
        i, j, order = b
        if order not in (1, 2, 3, 4):
            raise GraphError(f"bond order {order} not in 1..4")
        bonds.append(Bond(i, j, BondOrder(order)))
    graph = MolecularGraph(atoms, bonds, domain, family=obj.get("family"), max_atoms=max_atoms)
    if need_coords and not graph.has_coords:
        raise GraphError("missing coordinates (complexes require xyz on every atom)")
    return graph


def entry_from_obj(obj: dict, max_atoms: int = DEFAULT_MAX_ATOMS) -> DatasetEntry:
    if not isinstance(obj, dict):
        raise GraphError("line must hold a JSON object")
    kind = obj.get("kind")
    if kind not in KINDS:
        raise GraphError(f"unknown kind {kind!r}")
    entry_id = str(obj.get("id", ""))
    if kind == "complex":
        lig = _graph_from_obj(obj.get("ligand"), Domain.MOLECULE, True, max_atoms)
        poc = _graph_from_obj(obj.get("pocket"), Domain.POCKET, True, max_atoms)
        aff = obj.get("affinity")
        act = obj.get("active")
        rec = ComplexRecord(lig, poc, None if aff is None else float(aff),
                            None if act is None else bool(act))
        return DatasetEntry(kind, rec, entry_id)
    domain = Domain.MOLECULE if kind == "molecule" else Domain.POCKET
    graph = _graph_from_obj(obj, domain, False, max_atoms)
    act = obj.get("active")
    return DatasetEntry(kind, graph, entry_id, None if act is None else bool(act))


def parse_jsonl(path: str | Path, max_atoms: int = DEFAULT_MAX_ATOMS) -> list[DatasetEntry]:
    """Read a dataset file; any bad line raises GraphError carrying its 1-based line number."""
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise GraphError(f"malformed JSON ({exc.msg})", lineno) from None
            try:
                entries.append(entry_from_obj(obj, max_atoms))
            except GraphError as exc:
                raise GraphError(str(exc), lineno) from None
    return entries


def _graph_to_obj(graph: MolecularGraph) -> dict:
    atoms = []
    for a in graph.atoms:
        d = {"z": int(a.element)}
        if a.coords is not None:
            d["xyz"] = [float(c) for c in a.coords]
        atoms.append(d)
    obj = {"atoms": atoms, "bonds": [[b.i, b.j, int(b.order)] for b in graph.bonds]}
    if graph.family is not None:
        obj["family"] = int(graph.family)
    return obj


def entry_to_obj(entry: DatasetEntry) -> dict:
    obj: dict = {"kind": entry.kind, "id": entry.id}
    if entry.kind == "complex":
        rec = entry.payload
        obj["ligand"] = _graph_to_obj(rec.ligand)
        obj["pocket"] = _graph_to_obj(rec.pocket)
        if rec.affinity is not None:
            obj["affinity"] = rec.affinity
        if rec.active is not None:
            obj["active"] = rec.active
    else:
        obj.update(_graph_to_obj(entry.payload))
        if entry.active is not None:
            obj["active"] = entry.active
    return obj


def write_jsonl(entries: Iterable[DatasetEntry], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in entries:
            fh.write(json.dumps(entry_to_obj(e), separators=(",", ":")) + "\n")


# ---------------------------------------------------------------------------
# Pocket extraction
# ---------------------------------------------------------------------------

def extract_pocket(protein: MolecularGraph, ligand: MolecularGraph, cutoff: float = 5.0) -> MolecularGraph:
    """Keep protein atoms whose minimum distance to the ligand is <= cutoff (inclusive).

    Bonds survive only when both endpoints survive; indices are remapped densely
    in original order. Atom-level selection: whole residues are not kept.
    """
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    if not (protein.has_coords and ligand.has_coords):
        raise GraphError("pocket extraction needs coordinates on both graphs")
    diff = protein.coords[:, None, :] - ligand.coords[None, :, :]
    min_d = np.sqrt((diff ** 2).sum(-1)).min(axis=1)
    keep = np.flatnonzero(min_d <= cutoff)
    if keep.size == 0:
        raise EmptyPocket(f"no protein atom within {cutoff} A of the ligand")
    remap = {int(old): new for new, old in enumerate(keep)}
    atoms = [protein.atoms[i] for i in keep]
    bonds = [Bond(remap[b.i], remap[b.j], b.order) for b in protein.bonds
             if b.i in remap and b.j in remap]
    return MolecularGraph(atoms, bonds, Domain.POCKET, family=protein.family,
                          max_atoms=protein.max_atoms)


# ---------------------------------------------------------------------------
# 2D statistics
# ---------------------------------------------------------------------------

UNREACHABLE_KEY = "none"


def _graph_hist(graph: MolecularGraph, spd: Counter, deg: Counter) -> None:
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import shortest_path

    n = len(graph)
    ba = graph.bond_array
    adj = csr_matrix((np.ones(len(ba)), (ba[:, 0], ba[:, 1])), shape=(n, n))
    dist = shortest_path(adj, directed=False, unweighted=True)
    off = ~np.eye(n, dtype=bool)
    vals = dist[off]
    for v, c in zip(*np.unique(vals, return_counts=True)):
        key = UNREACHABLE_KEY if np.isinf(v) else str(int(v))
        spd[key] += int(c)
    for v, c in zip(*np.unique(graph.degrees(), return_counts=True)):
        deg[str(int(v))] += int(c)


def graph_stats(entries: Sequence[DatasetEntry]) -> dict:
    """Per-domain histograms of shortest-path length (ordered pairs) and out-degree."""
    if not entries:
        raise ValueError("graph_stats needs at least one entry")
    hist = {d: (Counter(), Counter()) for d in ("molecule", "pocket")}
    for e in entries:
        if e.kind == "complex":
            graphs = [e.payload.ligand, e.payload.pocket]
        else:
            graphs = [e.payload]
        for g in graphs:
            name = "molecule" if g.domain == Domain.MOLECULE else "pocket"
            _graph_hist(g, *hist[name])

    def order(c: Counter) -> dict:
        keys = sorted((k for k in c if k != UNREACHABLE_KEY), key=int)
        if UNREACHABLE_KEY in c:
            keys.append(UNREACHABLE_KEY)
        return {k: c[k] for k in keys}

    return {name: {"spd": order(s), "degree": order(d)} for name, (s, d) in hist.items() if s or d}


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

MOL_ELEMENTS = {6: 0.62, 7: 0.14, 8: 0.14, 9: 0.03, 16: 0.04, 17: 0.03}
POCKET_ELEMENTS = {6: 0.62, 7: 0.17, 8: 0.18, 16: 0.03}
# per-family "signature" elements used for planted-signal tasks
MOL_SIGNATURES = (7, 8, 9, 16, 17, 35, 15, 53)
POCKET_SIGNATURES = (7, 8, 16, 34)
BOND_ORDER_P = {1: 0.76, 2: 0.14, 3: 0.02, 4: 0.08}

BOND_LENGTH = 1.5
REPULSION_RADIUS = 2.0
RELAX_ITERS = 200
RELAX_STEP = 0.05
BOND_STIFFNESS = 4.0
REPULSION_STIFFNESS = 0.5
SHELL_STIFFNESS = 0.1
CONTACT_RADIUS = 4.0
# contacts per ligand atom mapped linearly onto [AFFINITY_MIN, AFFINITY_MAX]
CONTACT_RATIO_SCALE = 4.0
AFFINITY_MIN, AFFINITY_MAX = 2.0, 11.0


@dataclass
class GenConfig:
    n_molecules: int = 64
    n_pockets: int = 64
    n_complexes: int = 64
    mol_atoms: tuple[int, int] = (6, 16)
    pocket_atoms: tuple[int, int] = (20, 60)
    mol_elements: dict[int, float] = field(default_factory=lambda: dict(MOL_ELEMENTS))
    pocket_elements: dict[int, float] = field(default_factory=lambda: dict(POCKET_ELEMENTS))
    active_threshold: float = 5.0
    # >0 switches on planted families: complexes are active iff ligand/pocket families match
    n_families: int = 0
    signature_weight: float = 0.4
    active_fraction: float = 0.5
    # classification rule for molecules: active iff heteroatom fraction exceeds this
    hetero_threshold: float = 0.34
    max_atoms: int = DEFAULT_MAX_ATOMS

    def validate(self) -> None:
        for name in ("mol_atoms", "pocket_atoms"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo or hi > self.max_atoms:
                raise ValueError(f"infeasible {name} range ({lo}, {hi})")
        if self.pocket_atoms[0] < 2:
            raise ValueError("pockets need at least 2 atoms")
        for name in ("n_molecules", "n_pockets", "n_complexes", "n_families"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("mol_elements", "pocket_elements"):
            w = getattr(self, name)
            if not w or any(v < 0 for v in w.values()) or sum(w.values()) <= 0:
                raise ValueError(f"{name} needs positive weights")
            if any(not 1 <= int(z) <= MAX_ELEMENT for z in w):
                raise ValueError(f"{name} holds an element outside 1..{MAX_ELEMENT}")
        if self.n_families > 0 and self.n_complexes and self.n_families < 2:
            raise ValueError("planted complexes need at least 2 families")


def _element_sampler(weights: dict[int, float], signature: int | None, sig_weight: float):
    w = {int(k): float(v) for k, v in weights.items()}
    if signature is not None:
        total = sum(w.values())
        w = {k: v * (1 - sig_weight) / total for k, v in w.items()}
        w[signature] = w.get(signature, 0.0) + sig_weight
    zs = np.array(sorted(w), dtype=np.int64)
    p = np.array([w[z] for z in zs])
    return zs, p / p.sum()


def _random_tree(rng: np.random.Generator, n: int, chain_bias: float = 0.0) -> list[tuple[int, int]]:
    edges = []
    deg = np.zeros(n, dtype=np.int64)
    for k in range(1, n):
        if chain_bias and rng.random() < chain_bias and deg[k - 1] < 4:
            parent = k - 1
        else:
            cand = np.flatnonzero(deg[:k] < 4)
            parent = int(cand[rng.integers(len(cand))])
        edges.append((parent, k))
        deg[parent] += 1
        deg[k] += 1
    return edges


def _tree_distances(n: int, edges: list[tuple[int, int]]) -> np.ndarray:
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import shortest_path

    e = np.array(edges, dtype=np.int64).reshape(-1, 2)
    adj = csr_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    return shortest_path(adj, directed=False, unweighted=True)


def _ring_closures(rng: np.random.Generator, n: int, edges: list[tuple[int, int]]) -> list[tuple[int, int]]:
    if n < 5:
        return []
    dist = _tree_distances(n, edges)
    deg = np.zeros(n, dtype=np.int64)
    for i, j in edges:
        deg[i] += 1
        deg[j] += 1
    added = []
    in_ring = np.zeros(n, dtype=bool)
    for _ in range(int(rng.integers(0, 3))):
        ii, jj = np.nonzero(np.triu((dist == 4) | (dist == 5)))
        ok = (deg[ii] < 4) & (deg[jj] < 4)
        # rings never share atoms: fused or bridged rings on few atoms cannot reach 1.5 A bonds
        on_path = (dist[ii][:, :, None] + dist[:, jj].T[:, :, None] == dist[ii, jj][:, None, None])[..., 0]
        ok &= ~(on_path & in_ring[None, :]).any(1)
        ii, jj = ii[ok], jj[ok]
        if len(ii) == 0:
            break
        k = int(rng.integers(len(ii)))
        i, j = int(ii[k]), int(jj[k])
        in_ring |= dist[i] + dist[j] == dist[i, j]
        added.append((i, j))
        deg[i] += 1
        deg[j] += 1
    return added


def _relax(x: np.ndarray, edges: list[tuple[int, int]], shell_radius: float | None = None) -> np.ndarray:
    """Spring relaxation: bonds pulled to 1.5 A, non-bonded pairs pushed apart below 2.0 A."""
    n = len(x)
    bonded = np.zeros((n, n), dtype=bool)
    for i, j in edges:
        bonded[i, j] = bonded[j, i] = True
    nonbond = ~bonded & ~np.eye(n, dtype=bool)
    for _ in range(RELAX_ITERS):
        diff = x[:, None, :] - x[None, :, :]
        d = np.sqrt((diff ** 2).sum(-1))
        np.fill_diagonal(d, 1.0)
        coef = np.where(bonded, 2.0 * BOND_STIFFNESS * (d - BOND_LENGTH), 0.0)
        coef += np.where(nonbond & (d < REPULSION_RADIUS), -2.0 * REPULSION_STIFFNESS * (REPULSION_RADIUS - d), 0.0)
        grad = ((coef / d)[:, :, None] * diff).sum(1)
        if shell_radius is not None:
            r = np.linalg.norm(x, axis=1, keepdims=True)
            grad += 2.0 * SHELL_STIFFNESS * (r - shell_radius) * x / np.maximum(r, 1e-9)
        x = x - RELAX_STEP * grad
    return x


def _grow_coords(rng: np.random.Generator, n: int, edges: list[tuple[int, int]]) -> np.ndarray:
    x = np.zeros((n, 3))
    for parent, child in edges:
        u = rng.normal(size=3)
        x[child] = x[parent] + BOND_LENGTH * u / np.linalg.norm(u)
    return x


def _bond_orders(rng: np.random.Generator, m: int) -> np.ndarray:
    orders = np.array(sorted(BOND_ORDER_P))
    p = np.array([BOND_ORDER_P[o] for o in orders])
    return rng.choice(orders, size=m, p=p)


def _make_graph(n: int, edges, elements, coords, domain: Domain, orders, family, max_atoms) -> MolecularGraph:
    coords = np.round(coords - coords.mean(0), 4) + 0.0
    atoms = [Atom(int(z), tuple(float(c) for c in xyz)) for z, xyz in zip(elements, coords)]
    bonds = [Bond(int(i), int(j), BondOrder(int(o))) for (i, j), o in zip(edges, orders)]
    return MolecularGraph(atoms, bonds, domain, family=family, max_atoms=max_atoms)


def _gen_molecule(rng: np.random.Generator, cfg: GenConfig, family: int | None) -> MolecularGraph:
    n = int(rng.integers(cfg.mol_atoms[0], cfg.mol_atoms[1] + 1))
    edges = _random_tree(rng, n)
    edges += _ring_closures(rng, n, edges)
    sig = None if family is None else MOL_SIGNATURES[family % len(MOL_SIGNATURES)]
    zs, p = _element_sampler(cfg.mol_elements, sig, cfg.signature_weight)
    elements = rng.choice(zs, size=n, p=p)
    x = _relax(_grow_coords(rng, n, edges), edges)
    return _make_graph(n, edges, elements, x, Domain.MOLECULE, _bond_orders(rng, len(edges)),
                       family, cfg.max_atoms)


def _gen_pocket(rng: np.random.Generator, cfg: GenConfig, family: int | None,
                radius: float | None = None) -> MolecularGraph:
    """A cap-shaped shell (open towards -z) built from a few bonded chains.

    With an explicit radius the atom count follows the cap area (about 8 A^2
    per atom, clipped to the configured range) so the shell stays closed enough
    to hold a ligand.
    """
    lo, hi = cfg.pocket_atoms
    if radius is None:
        n = int(rng.integers(lo, hi + 1))
    else:
        n = int(np.clip(round(3 * math.pi * radius ** 2 / 8.0), lo, hi))
    n_chains = int(rng.integers(1, min(3, n // 2) + 1))
    cuts = np.sort(rng.choice(np.arange(1, n), size=n_chains - 1, replace=False)) if n_chains > 1 else []
    bounds = [0, *map(int, cuts), n]
    edges = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        edges += [(a + i, a + j) for i, j in _random_tree(rng, b - a, chain_bias=0.8)]
    if radius is None:
        radius = max(4.5, math.sqrt(n * 4.5 / (3 * math.pi)))
    # random walk over the cap (polar angle <= 120 degrees)
    theta = rng.uniform(0, 2 * math.pi / 3, size=n)
    phi = rng.uniform(0, 2 * math.pi, size=n)
    x = radius * np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], 1)
    for parent, child in edges:
        u = rng.normal(size=3)
        x[child] = x[parent] + BOND_LENGTH * u / np.linalg.norm(u)
    x = _relax(x, edges, shell_radius=radius)
    sig = None if family is None else POCKET_SIGNATURES[family % len(POCKET_SIGNATURES)]
    zs, p = _element_sampler(cfg.pocket_elements, sig, cfg.signature_weight)
    elements = rng.choice(zs, size=n, p=p)
    orders = rng.choice([1, 2], size=len(edges), p=[0.85, 0.15])
    # pockets keep their frame: the cap axis is used to place ligands
    coords = np.round(x, 4) + 0.0
    atoms = [Atom(int(z), tuple(float(c) for c in xyz)) for z, xyz in zip(elements, coords)]
    bonds = [Bond(int(i), int(j), BondOrder(int(o))) for (i, j), o in zip(edges, orders)]
    return MolecularGraph(atoms, bonds, Domain.POCKET, family=family, max_atoms=cfg.max_atoms)


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def _min_dist(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(((a[:, None] - b[None]) ** 2).sum(-1)).min())


def _place_ligand(rng: np.random.Generator, lig: np.ndarray, poc: np.ndarray, target: float) -> np.ndarray:
    """Move the ligand from the cavity centre until its min pocket distance equals target.

    Starting clear of the shell it slides towards the shell; starting too close
    it backs away. Either way the crossing is bisected.
    """
    centred = lig - lig.mean(0)
    for _attempt in range(20):
        lig = centred @ _random_rotation(rng).T
        # head for the densest part of the shell, jittered per attempt
        up = poc.mean(0) / max(float(np.linalg.norm(poc.mean(0))), 1e-9) + 0.3 * rng.normal(size=3)
        up /= np.linalg.norm(up)

        def gap(z: float) -> float:
            return _min_dist(lig + z * up, poc) - target

        step = 0.25 if gap(0.0) > 0 else -0.25
        z_prev, z = 0.0, 0.0
        found = False
        for _ in range(200):
            z_prev, z = z, z + step
            if (gap(z) > 0) != (gap(z_prev) > 0):
                found = True
                break
        if found:
            break
    else:
        raise RuntimeError("ligand placement failed")
    lo, hi = (z_prev, z) if gap(z_prev) > 0 else (z, z_prev)
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if gap(mid) > 0:
            lo = mid
        else:
            hi = mid
    return lig + hi * up


def contact_affinity(lig: np.ndarray, poc: np.ndarray) -> float:
    d = np.sqrt(((lig[:, None] - poc[None]) ** 2).sum(-1))
    ratio = float((d <= CONTACT_RADIUS).sum()) / len(lig)
    frac = min(ratio / CONTACT_RATIO_SCALE, 1.0)
    return AFFINITY_MIN + (AFFINITY_MAX - AFFINITY_MIN) * frac


def _with_coords(g: MolecularGraph, xyz: np.ndarray) -> MolecularGraph:
    atoms = [Atom(a.element, tuple(float(c) for c in p)) for a, p in zip(g.atoms, xyz)]
    return MolecularGraph(atoms, g.bonds, g.domain, family=g.family, max_atoms=g.max_atoms)


def _gen_complex(rng: np.random.Generator, cfg: GenConfig) -> ComplexRecord:
    pfam = lfam = None
    if cfg.n_families > 0:
        pfam = int(rng.integers(cfg.n_families))
        if rng.random() < cfg.active_fraction:
            lfam = pfam
        else:
            lfam = int((pfam + rng.integers(1, cfg.n_families)) % cfg.n_families)
    ligand = _gen_molecule(rng, cfg, lfam)
    target = rng.uniform(2.5, 4.5)
    lig_extent = float(np.linalg.norm(ligand.coords - ligand.coords.mean(0), axis=1).max())
    pocket = _gen_pocket(rng, cfg, pfam, radius=lig_extent + target + rng.uniform(-1.0, 1.5))
    lig_xyz = _place_ligand(rng, ligand.coords, pocket.coords, target)
    rot = _random_rotation(rng)
    centre = pocket.coords.mean(0)
    lig_xyz = np.round((lig_xyz - centre) @ rot.T, 4) + 0.0
    poc_xyz = np.round((pocket.coords - centre) @ rot.T, 4) + 0.0
    affinity = round(contact_affinity(lig_xyz, poc_xyz), 6)
    if cfg.n_families > 0:
        active = pfam == lfam
    else:
        active = affinity > cfg.active_threshold
    return ComplexRecord(_with_coords(ligand, lig_xyz), _with_coords(pocket, poc_xyz), affinity, bool(active))


def molecule_label(graph: MolecularGraph, threshold: float) -> bool:
    """Linear rule on graph statistics: heteroatoms - threshold * atoms > 0."""
    hetero = int((graph.elements != 6).sum())
    return hetero - threshold * len(graph) > 0


def synth_generate(seed: int, cfg: GenConfig | None = None) -> list[DatasetEntry]:
    """Deterministic synthetic molecules, pockets and complexes for the given seed."""
    cfg = cfg or GenConfig()
    cfg.validate()
    root = np.random.SeedSequence(seed)
    mol_ss, poc_ss, cpx_ss = root.spawn(3)
    out = []
    for k, ss in enumerate(mol_ss.spawn(cfg.n_molecules)):
        rng = np.random.default_rng(ss)
        fam = int(rng.integers(cfg.n_families)) if cfg.n_families > 0 else None
        g = _gen_molecule(rng, cfg, fam)
        out.append(DatasetEntry("molecule", g, f"mol-{k}", molecule_label(g, cfg.hetero_threshold)))
    for k, ss in enumerate(poc_ss.spawn(cfg.n_pockets)):
        rng = np.random.default_rng(ss)
        fam = int(rng.integers(cfg.n_families)) if cfg.n_families > 0 else None
        out.append(DatasetEntry("pocket", _gen_pocket(rng, cfg, fam), f"pocket-{k}"))
    for k, ss in enumerate(cpx_ss.spawn(cfg.n_complexes)):
        rng = np.random.default_rng(ss)
        out.append(DatasetEntry("complex", _gen_complex(rng, cfg), f"complex-{k}"))
    return out
