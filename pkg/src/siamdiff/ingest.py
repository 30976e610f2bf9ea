"""PDB-subset parsing and atom/residue graph construction."""
from __future__ import annotations

import io
import os
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import Protein, build_chi_topology, one_hot
from .errors import (
    EmptyInputError,
    GeometryError,
    InvalidParameterError,
    ParseError,
    StructuralError,
)
from .residues import (
    MASK,
    NUM_ELEMENT_TYPES,
    RESIDUE_INDEX,
    RESIDUE_NAMES,
    element_index,
    element_of,
)

NUM_RESIDUE_CLASSES = MASK + 1  # 20 types + MASK


# --------------------------------------------------------------------------
# PDB subset
# --------------------------------------------------------------------------

def parse_pdb_subset(source, strip_hydrogens=False, ca_only=False):
    """Read fixed-column ATOM records into a Protein.

    ``source`` may be a path, bytes, str of file content, or a text stream.
    Only the first MODEL is read; HETATM and other records are skipped; for
    alternate locations the first one seen wins. Chains are concatenated in
    order of first appearance.
    """
    lines = _read_lines(source)
    chains: dict[str, list] = {}
    seen_alt: dict[tuple, str] = {}
    for lineno, raw in enumerate(lines, start=1):
        if raw.startswith("ENDMDL"):
            break
        if not raw.startswith("ATOM  ") and not raw.startswith("ATOM "):
            continue
        line = raw.rstrip("\r\n").ljust(80)
        name = line[12:16].strip()
        alt = line[16]
        resname = line[17:20].strip()
        chain = line[21]
        try:
            resseq = int(line[22:26])
        except ValueError:
            raise ParseError(f"bad residue number {line[22:26]!r}", lineno) from None
        icode = line[26]
        try:
            xyz = (float(line[30:38]), float(line[38:46]), float(line[46:54]))
        except ValueError:
            raise ParseError(f"malformed coordinate field {line[30:54]!r}", lineno) from None
        if not all(np.isfinite(xyz)):
            raise ParseError("non-finite coordinate", lineno)
        if resname not in RESIDUE_INDEX:
            raise ParseError(f"unknown residue name {resname!r}", lineno)
        element = element_of(name, line[76:78])
        if strip_hydrogens and element in ("H", "D"):
            continue
        if ca_only and name != "CA":
            continue
        key = (chain, resseq, icode, name)
        if alt != " ":
            first = seen_alt.setdefault(key, alt)
            if first != alt:
                continue
        residues = chains.setdefault(chain, [])
        rkey = (resseq, icode)
        if not residues or residues[-1]["key"] != rkey:
            residues.append({"key": rkey, "name": resname, "atoms": [], "line": lineno})
        elif residues[-1]["name"] != resname:
            raise ParseError(f"residue {resseq}{icode.strip()} changes name mid-record", lineno)
        if any(a[0] == name for a in residues[-1]["atoms"]):
            continue
        residues[-1]["atoms"].append((name, element, xyz))

    if not chains:
        raise EmptyInputError("no ATOM records found")

    sequence, coords, names, elements, owner, spans, chis, chain_ids, numbers = ([] for _ in range(9))
    for chain, residues in chains.items():
        for res in residues:
            r = len(sequence)
            atom_names = [a[0] for a in res["atoms"]]
            required = ("CA",) if ca_only else ("N", "CA", "C")
            missing = [a for a in required if a not in atom_names]
            if missing:
                raise StructuralError(
                    f"residue {res['name']}{res['key'][0]}{res['key'][1].strip()} chain {chain!r} "
                    f"is missing backbone atom(s) {', '.join(missing)}")
            start = len(names)
            xyz = np.array([a[2] for a in res["atoms"]], dtype=np.float64)
            sequence.append(RESIDUE_INDEX[res["name"]])
            coords.extend(xyz)
            names.extend(atom_names)
            elements.extend(a[1] for a in res["atoms"])
            owner.extend([r] * len(atom_names))
            spans.append((start, len(names)))
            chis.append(() if ca_only else build_chi_topology(res["name"], atom_names, xyz, offset=start))
            chain_ids.append(chain)
            numbers.append(res["key"][0])

    return Protein(
        sequence=np.array(sequence),
        coords=np.array(coords, dtype=np.float64).reshape(-1, 3),
        atom_names=tuple(names),
        elements=tuple(elements),
        atom_to_residue=np.array(owner),
        residue_atom_spans=np.array(spans),
        chi_topology=tuple(chis),
        chain_ids=tuple(chain_ids),
        residue_numbers=tuple(numbers),
    )


def _read_lines(source):
    if hasattr(source, "read"):
        data = source.read()
    elif isinstance(source, bytes):
        data = source
    elif isinstance(source, os.PathLike) or (isinstance(source, str) and "\n" not in source and os.path.exists(source)):
        with open(source, "rb") as fh:
            data = fh.read()
    else:
        data = source
    if isinstance(data, bytes):
        data = data.decode("ascii", errors="replace")
    return io.StringIO(data).readlines()


def format_pdb_subset(p: Protein, coords=None) -> str:
    """Write ``p`` (optionally with replacement coordinates) as ATOM records."""
    coords = p.coords if coords is None else np.asarray(coords)
    out = []
    for a in range(p.num_atoms):
        r = int(p.atom_to_residue[a])
        code = int(p.sequence[r])
        resname = "UNK" if code == MASK else RESIDUE_NAMES[code]
        name = p.atom_names[a]
        padded = f" {name:<3s}" if len(name) < 4 and len(p.elements[a]) == 1 else f"{name:<4s}"
        x, y, z = coords[a]
        out.append(
            f"ATOM  {(a + 1) % 100000:5d} {padded} {resname:>3s} {p.chain_ids[r]:1s}{p.residue_numbers[r]:4d}    "
            f"{x:8.3f}{y:8.3f}{z:8.3f}{1.0:6.2f}{0.0:6.2f}          {p.elements[a]:>2s}"
        )
    out.append("END")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# graphs
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GraphConfig:
    level: str = "residue"
    atom_radius: float = 4.5
    seq_dist_threshold: int = 3
    residue_radius: float = 10.0
    knn_k: int = 10
    long_range_cutoff: int = 5
    angle_bins: int = 8
    line_graph: bool = True

    def __post_init__(self):
        if self.level not in ("atom", "residue"):
            raise InvalidParameterError(f"level must be 'atom' or 'residue', got {self.level!r}")
        for name in ("atom_radius", "seq_dist_threshold", "residue_radius", "long_range_cutoff", "angle_bins"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be positive")
        if self.knn_k < 1:
            raise InvalidParameterError("knn_k must be >= 1")

    @property
    def num_relations(self):
        if self.level == "atom":
            return 1
        return 2 * self.seq_dist_threshold + 2

    @property
    def node_feature_dim(self):
        if self.level == "atom":
            return NUM_ELEMENT_TYPES + NUM_RESIDUE_CLASSES
        return NUM_RESIDUE_CLASSES

    @property
    def edge_feature_dim(self):
        return 2 * NUM_RESIDUE_CLASSES + self.num_relations + self.seq_dist_threshold + 2


@dataclass(frozen=True, eq=False)
class ProteinGraph:
    num_nodes: int
    node_features: np.ndarray   # (n, F_v)
    src: np.ndarray             # (m,)
    dst: np.ndarray             # (m,)
    relation: np.ndarray        # (m,)
    edge_features: np.ndarray   # (m, F_e)
    level: str
    num_relations: int
    coords: np.ndarray          # node positions the graph was built on
    node_residue: np.ndarray    # owning residue of each node
    line_graph_edges: np.ndarray | None = None  # (p, 3): edge_in, edge_out, angle bin
    angle_bins: int = 8
    extra: dict = field(default_factory=dict)

    @property
    def num_edges(self):
        return int(self.src.shape[0])

    @property
    def edges(self):
        return np.stack([self.src, self.dst, self.relation], axis=1)

    def neighbor_pairs(self):
        """Unique unordered node pairs (i < j) joined by at least one edge."""
        if self.num_edges == 0:
            return np.empty((0, 2), dtype=np.int64)
        lo = np.minimum(self.src, self.dst)
        hi = np.maximum(self.src, self.dst)
        return np.unique(np.stack([lo, hi], axis=1), axis=0)


def _sorted_edges(src, dst, rel):
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    rel = np.asarray(rel, dtype=np.int64)
    if src.size == 0:
        return src, dst, rel
    stacked = np.unique(np.stack([src, dst, rel], axis=1), axis=0)  # lexicographic (src, dst, rel)
    return stacked[:, 0], stacked[:, 1], stacked[:, 2]


def _edge_features(p: Protein, node_residue, src, dst, rel, coords, cfg: GraphConfig):
    res_i = p.sequence[node_residue[src]]
    res_j = p.sequence[node_residue[dst]]
    seqdist = np.abs(node_residue[src] - node_residue[dst])
    chain = np.array(p.chain_ids)
    same_chain = chain[node_residue[src]] == chain[node_residue[dst]] if src.size else np.zeros(0, bool)
    seqdist = np.where(same_chain, np.minimum(seqdist, cfg.seq_dist_threshold), cfg.seq_dist_threshold)
    dist = np.linalg.norm(coords[src] - coords[dst], axis=1) if src.size else np.zeros(0)
    return np.concatenate([
        one_hot(res_i, NUM_RESIDUE_CLASSES),
        one_hot(res_j, NUM_RESIDUE_CLASSES),
        one_hot(rel, cfg.num_relations),
        one_hot(seqdist, cfg.seq_dist_threshold + 1),
        dist[:, None],
    ], axis=1)


def build_atom_graph(p: Protein, cfg: GraphConfig) -> ProteinGraph:
    if cfg.level != "atom":
        raise InvalidParameterError("build_atom_graph needs cfg.level == 'atom'")
    if p.num_atoms == 0:
        raise EmptyInputError("protein has no atoms")
    coords = p.coords
    i, j = _kernels.radius_pairs(coords, cfg.atom_radius)
    src, dst, rel = _sorted_edges(np.concatenate([i, j]), np.concatenate([j, i]), np.zeros(2 * i.size))
    node_residue = p.atom_to_residue
    elem = np.array([element_index(e) for e in p.elements], dtype=np.int64)
    node_features = np.concatenate([
        one_hot(elem, NUM_ELEMENT_TYPES),
        one_hot(p.sequence[node_residue], NUM_RESIDUE_CLASSES),
    ], axis=1)
    g = ProteinGraph(
        num_nodes=p.num_atoms,
        node_features=node_features,
        src=src, dst=dst, relation=rel,
        edge_features=_edge_features(p, node_residue, src, dst, rel, coords, cfg),
        level="atom",
        num_relations=cfg.num_relations,
        coords=coords,
        node_residue=node_residue,
        angle_bins=cfg.angle_bins,
    )
    return _with_line_graph(g, cfg)


def build_residue_graph(p: Protein, cfg: GraphConfig) -> ProteinGraph:
    if cfg.level != "residue":
        raise InvalidParameterError("build_residue_graph needs cfg.level == 'residue'")
    if p.num_residues == 0:
        raise EmptyInputError("protein has no residues")
    coords = p.coords[p.ca_indices()]
    n = coords.shape[0]
    res = np.arange(n)
    chain = np.array(p.chain_ids)
    d_seq = cfg.seq_dist_threshold

    srcs, dsts, rels = [], [], []
    # sequential: one relation per signed offset, same chain only
    for rid, off in enumerate([o for o in range(-d_seq, d_seq + 1) if o != 0]):
        a = res[max(0, -off): max(0, n - max(0, off))]
        b = a + off
        keep = chain[a] == chain[b]
        srcs.append(a[keep]); dsts.append(b[keep]); rels.append(np.full(keep.sum(), rid))
    radius_id, knn_id = 2 * d_seq, 2 * d_seq + 1
    i, j = _kernels.radius_pairs(coords, cfg.residue_radius)
    keep = np.abs(i - j) >= cfg.long_range_cutoff
    i, j = i[keep], j[keep]
    srcs += [i, j]; dsts += [j, i]; rels += [np.full(2 * i.size, radius_id)]
    nbr = _kernels.knn_indices(coords, cfg.knn_k)
    ki = np.repeat(res, nbr.shape[1])
    kj = nbr.reshape(-1)
    keep = np.abs(ki - kj) >= cfg.long_range_cutoff
    ki, kj = ki[keep], kj[keep]
    srcs += [ki, kj]; dsts += [kj, ki]; rels += [np.full(2 * ki.size, knn_id)]
    src, dst, rel = _sorted_edges(np.concatenate(srcs), np.concatenate(dsts), np.concatenate(rels))

    g = ProteinGraph(
        num_nodes=n,
        node_features=one_hot(p.sequence, NUM_RESIDUE_CLASSES),
        src=src, dst=dst, relation=rel,
        edge_features=_edge_features(p, res, src, dst, rel, coords, cfg),
        level="residue",
        num_relations=cfg.num_relations,
        coords=coords,
        node_residue=res,
        angle_bins=cfg.angle_bins,
    )
    return _with_line_graph(g, cfg)


def build_graph(p: Protein, cfg: GraphConfig) -> ProteinGraph:
    return build_atom_graph(p, cfg) if cfg.level == "atom" else build_residue_graph(p, cfg)


def _with_line_graph(g: ProteinGraph, cfg: GraphConfig) -> ProteinGraph:
    if not cfg.line_graph or g.num_edges == 0:
        return g
    lg = build_line_graph(g, cfg.angle_bins)
    return ProteinGraph(**{**{f: getattr(g, f) for f in g.__dataclass_fields__}, "line_graph_edges": lg})


def build_line_graph(g: ProteinGraph, angle_bins: int = 8) -> np.ndarray:
    """Edge pairs (i->j, j->k), k != i, labelled by the binned angle between r_i - r_j and r_k - r_j.

    Returns an int array of shape (p, 3): incoming edge, outgoing edge, bin.
    """
    if g.num_edges == 0:
        raise InvalidParameterError("line graph needs at least one edge")
    if angle_bins < 1:
        raise InvalidParameterError("angle_bins must be >= 1")
    ein, eout = _kernels.line_graph_pairs(g.src, g.dst, g.num_nodes)
    if ein.size == 0:
        return np.empty((0, 3), dtype=np.int64)
    x = g.coords
    v1 = x[g.src[ein]] - x[g.dst[ein]]
    v2 = x[g.dst[eout]] - x[g.src[eout]]
    n1 = np.linalg.norm(v1, axis=1)
    n2 = np.linalg.norm(v2, axis=1)
    if np.any(n1 == 0) or np.any(n2 == 0):
        raise GeometryError("angle undefined at a zero-length edge")
    cos = np.clip(np.sum(v1 * v2, axis=1) / (n1 * n2), -1.0, 1.0)
    angle = np.arccos(cos)
    bins = np.minimum((angle / (np.pi / angle_bins)).astype(np.int64), angle_bins - 1)
    return np.stack([ein, eout, bins], axis=1)


def read_manifest(path):
    """Newline-separated file paths; relative entries resolve against the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            out.append(line if os.path.isabs(line) else os.path.join(base, line))
    return out


def toy_manifest_path():
    return os.path.join(os.path.dirname(__file__), "data", "toy", "manifest.txt")


def load_toy_set(strip_hydrogens=True):
    return [parse_pdb_subset(f, strip_hydrogens=strip_hydrogens) for f in read_manifest(toy_manifest_path())]
