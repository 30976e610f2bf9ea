"""Relational message-passing encoder with edge (line-graph) updates, plus the two denoising heads.

Layout of one layer, for node states h (n, d) and edge states e (m, d):

    e' = relu( W_line . agg_bin(e[in]) / deg_line + e W_lself + b_line )     (optional)
    msg_k = h[src_k] + e'_k W_edge
    h' = relu( W_rel . agg_rel(msg) / deg + h W_self + b )

``agg_rel`` sums messages per (destination, relation) and the relation blocks
are stacked before one matmul, which is the same as a separate linear map per
relation. Sums are divided by the graph's mean in-degree, a constant that only
depends on the edge list, to keep activations at unit scale across graph sizes.
The readout concatenates every layer's node states.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import GeometryError, ShapeError, UsageError
from .ingest import GraphConfig, ProteinGraph
from .residues import NUM_RESIDUE_TYPES

DIST_EMBED_DIM = 16
NOISE_LEVEL_DIM = 2  # (sqrt(abar_t), sqrt(1 - abar_t)) appended to the pair distance


@dataclass(frozen=True)
class Architecture:
    level: str
    node_dim: int
    edge_dim: int
    num_relations: int
    angle_bins: int
    line_graph: bool
    hidden_dim: int = 64
    num_layers: int = 3

    @property
    def readout_dim(self):
        return self.hidden_dim * self.num_layers

    @classmethod
    def from_graph_config(cls, cfg: GraphConfig, hidden_dim=64, num_layers=3):
        return cls(level=cfg.level, node_dim=cfg.node_feature_dim, edge_dim=cfg.edge_feature_dim,
                   num_relations=cfg.num_relations, angle_bins=cfg.angle_bins,
                   line_graph=cfg.line_graph, hidden_dim=hidden_dim, num_layers=num_layers)

    @classmethod
    def paper_scale(cls, cfg: GraphConfig):
        d = 512 if cfg.level == "residue" else 128
        return cls.from_graph_config(cfg, hidden_dim=d, num_layers=6)

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def shapes(self):
        d, L = self.hidden_dim, self.num_layers
        D = self.readout_dim
        s = {
            "input.W": (self.node_dim, d), "input.b": (d,),
            "edge_in.W": (self.edge_dim, d), "edge_in.b": (d,),
        }
        for l in range(L):
            s[f"layer{l}.rel.W"] = (self.num_relations * d, d)
            s[f"layer{l}.self.W"] = (d, d)
            s[f"layer{l}.b"] = (d,)
            s[f"layer{l}.edge.W"] = (d, d)
            if self.line_graph:
                s[f"layer{l}.line.W"] = (self.angle_bins * d, d)
                s[f"layer{l}.line.self.W"] = (d, d)
                s[f"layer{l}.line.b"] = (d,)
        s.update({
            "noise.dist1.W": (1 + NOISE_LEVEL_DIM, DIST_EMBED_DIM), "noise.dist1.b": (DIST_EMBED_DIM,),
            "noise.dist2.W": (DIST_EMBED_DIM, DIST_EMBED_DIM), "noise.dist2.b": (DIST_EMBED_DIM,),
            "noise.mlp1.W": (2 * D + DIST_EMBED_DIM, d), "noise.mlp1.b": (d,),
            "noise.mlp2.W": (d, 1), "noise.mlp2.b": (1,),
            "seq.mlp1.W": (D, d), "seq.mlp1.b": (d,),
            "seq.mlp2.W": (d, NUM_RESIDUE_TYPES), "seq.mlp2.b": (NUM_RESIDUE_TYPES,),
        })
        return dict(sorted(s.items()))


@dataclass(eq=False)
class ModelParams:
    arch: Architecture
    tensors: dict = field(default_factory=dict)

    def __post_init__(self):
        want = self.arch.shapes()
        if set(want) != set(self.tensors):
            missing = sorted(set(want) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(want))
            raise ShapeError(f"parameter names do not match architecture (missing {missing}, extra {extra})")
        for k, shp in want.items():
            v = np.asarray(self.tensors[k], dtype=np.float64)
            if v.shape != shp:
                raise ShapeError(f"{k}: expected shape {shp}, got {v.shape}")
            if not np.all(np.isfinite(v)):
                raise ShapeError(f"{k}: non-finite values")
            self.tensors[k] = v
        self.tensors = dict(sorted(self.tensors.items()))

    @classmethod
    def init(cls, arch: Architecture, seed=0):
        """Gaussian fan-in init for weights, zero biases."""
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5eed]))
        tensors = {}
        for k, shp in arch.shapes().items():
            if len(shp) == 1:
                tensors[k] = np.zeros(shp)
            else:
                tensors[k] = rng.standard_normal(shp) / np.sqrt(shp[0])
        return cls(arch, tensors)

    @classmethod
    def zeros(cls, arch: Architecture):
        return cls(arch, {k: np.zeros(s) for k, s in arch.shapes().items()})

    @property
    def names(self):
        return list(self.tensors)

    def __getitem__(self, k):
        return self.tensors[k]

    def num_parameters(self):
        return int(sum(v.size for v in self.tensors.values()))

    def copy(self):
        return ModelParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})

    def replace(self, tensors):
        return ModelParams(self.arch, dict(tensors))

    def bind(self, tape=None):
        """Leaf variables on a (new) tape; one binding can serve several forward passes."""
        tape = tape or ad.Tape()
        return Bound(self, tape, {k: tape.leaf(k, v) for k, v in self.tensors.items()})


@dataclass(eq=False)
class Bound:
    params: ModelParams
    tape: ad.Tape
    leaves: dict

    def __getitem__(self, k):
        return self.leaves[k]


@dataclass(eq=False)
class GradientBundle:
    grads: dict

    def __getitem__(self, k):
        return self.grads[k]

    @property
    def names(self):
        return list(self.grads)

    def global_norm(self):
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.grads.values())))

    def all_finite(self):
        return all(np.all(np.isfinite(g)) for g in self.grads.values())


@dataclass(eq=False)
class EncodedProtein:
    atom_var: ad.Var
    residue_var: ad.Var
    hidden_vars: list
    bound: Bound

    @property
    def atom_reps(self):
        return self.atom_var.value

    @property
    def residue_reps(self):
        return self.residue_var.value

    @property
    def hidden(self):
        return [h.value for h in self.hidden_vars]


def _as_bound(params):
    if isinstance(params, Bound):
        return params
    if isinstance(params, ModelParams):
        return params.bind()
    raise UsageError("expected ModelParams or a bound parameter set")


def _check_graph(graph: ProteinGraph, arch: Architecture):
    if graph.level != arch.level:
        raise ShapeError(f"graph level {graph.level!r} does not match parameters ({arch.level!r})")
    if graph.node_features.shape[1] != arch.node_dim:
        raise ShapeError(f"node features have {graph.node_features.shape[1]} columns, params expect {arch.node_dim}")
    if graph.num_edges and graph.edge_features.shape[1] != arch.edge_dim:
        raise ShapeError(f"edge features have {graph.edge_features.shape[1]} columns, params expect {arch.edge_dim}")
    if graph.num_relations != arch.num_relations:
        raise ShapeError("relation count does not match parameters")


def encode(graph: ProteinGraph, params, num_residues=None) -> EncodedProtein:
    """Run the encoder on one graph. ``params`` may be ModelParams or a Bound set."""
    b = _as_bound(params)
    arch = b.params.arch
    _check_graph(graph, arch)
    tape = b.tape
    n, m = graph.num_nodes, graph.num_edges
    R, d = arch.num_relations, arch.hidden_dim

    h = ad.relu(ad.matmul(tape.const(graph.node_features), b["input.W"]) + b["input.b"])
    use_line = arch.line_graph and graph.line_graph_edges is not None and len(graph.line_graph_edges) > 0
    if m:
        e = ad.relu(ad.matmul(tape.const(graph.edge_features), b["edge_in.W"]) + b["edge_in.b"])
        node_key = graph.dst * R + graph.relation
        node_norm = 1.0 / max(1.0, m / n)
        if use_line:
            lg = graph.line_graph_edges
            B = arch.angle_bins
            line_key = lg[:, 1] * B + lg[:, 2]
            line_norm = 1.0 / max(1.0, len(lg) / m)

    hidden = []
    for l in range(arch.num_layers):
        self_term = ad.matmul(h, b[f"layer{l}.self.W"]) + b[f"layer{l}.b"]
        if m:
            if use_line:
                agg_e = ad.segment_sum(ad.take(e, lg[:, 0]), line_key, m * B)
                agg_e = ad.matmul(ad.reshape(agg_e, (m, B * d)), b[f"layer{l}.line.W"]) * line_norm
                e = ad.relu(agg_e + ad.matmul(e, b[f"layer{l}.line.self.W"]) + b[f"layer{l}.line.b"])
            msg = ad.take(h, graph.src) + ad.matmul(e, b[f"layer{l}.edge.W"])
            agg = ad.segment_sum(msg, node_key, n * R)
            agg = ad.matmul(ad.reshape(agg, (n, R * d)), b[f"layer{l}.rel.W"]) * node_norm
            h = ad.relu(agg + self_term)
        else:
            h = ad.relu(self_term)
        hidden.append(h)

    atom = ad.concat(hidden, axis=1)
    if graph.level == "atom":
        nr = int(num_residues if num_residues is not None else graph.node_residue.max() + 1)
        counts = np.bincount(graph.node_residue, minlength=nr).astype(np.float64)
        if np.any(counts == 0):
            raise ShapeError("a residue owns no atoms in the graph")
        residue = ad.segment_sum(atom, graph.node_residue, nr) * (1.0 / counts)[:, None]
    else:
        residue = atom
    return EncodedProtein(atom_var=atom, residue_var=residue, hidden_vars=hidden, bound=b)


def directed_pairs(graph: ProteinGraph):
    """Both orientations of every unordered neighbour pair, sorted by (i, j)."""
    p = graph.neighbor_pairs()
    if p.shape[0] == 0:
        return p
    both = np.concatenate([p, p[:, ::-1]], axis=0)
    order = np.lexsort((both[:, 1], both[:, 0]))
    return both[order]


def noise_level_features(alpha_bar):
    return np.array([np.sqrt(alpha_bar), np.sqrt(1.0 - alpha_bar)])


def structure_noise_var(enc: EncodedProtein, graph: ProteinGraph, coords_t, pairs=None, alpha_bar=1.0):
    """[eps_theta]_i = sum_j m_ij (r_i - r_j)/|r_i - r_j| as a recorded variable.

    ``enc`` may come from another conformer of the same protein (cross
    prediction); geometry and neighbourhoods always come from ``graph``/``coords_t``.
    The pair MLP sees the distance together with the noise level ``alpha_bar``
    of step t, since the target is scaled by 1/sqrt(1 - alpha_bar).
    """
    b = enc.bound
    tape = b.tape
    coords_t = np.asarray(coords_t, dtype=np.float64)
    n = coords_t.shape[0]
    if enc.atom_reps.shape[0] != n:
        raise ShapeError(f"{enc.atom_reps.shape[0]} node representations for {n} coordinates")
    if pairs is None:
        pairs = directed_pairs(graph)
    if pairs.shape[0] == 0:
        return tape.const(np.zeros((n, 3)))
    i, j = pairs[:, 0], pairs[:, 1]
    diff = coords_t[i] - coords_t[j]
    dist = np.linalg.norm(diff, axis=1)
    if np.any(dist == 0):
        raise GeometryError("coincident neighbour pair in the noisy structure")
    unit = diff / dist[:, None]
    dfeat = np.concatenate([dist[:, None], np.broadcast_to(noise_level_features(alpha_bar), (dist.shape[0], 2))], axis=1)
    demb = ad.relu(ad.matmul(tape.const(dfeat), b["noise.dist1.W"]) + b["noise.dist1.b"])
    demb = ad.matmul(demb, b["noise.dist2.W"]) + b["noise.dist2.b"]
    a = enc.atom_var
    z = ad.concat([ad.take(a, i), ad.take(a, j), demb], axis=1)
    z = ad.relu(ad.matmul(z, b["noise.mlp1.W"]) + b["noise.mlp1.b"])
    mij = ad.matmul(z, b["noise.mlp2.W"]) + b["noise.mlp2.b"]      # (p, 1)
    return ad.segment_sum(mij * unit, i, n)


def predict_structure_noise(enc: EncodedProtein, graph: ProteinGraph, coords_t, params=None, alpha_bar=1.0):
    """Equivariant noise prediction, shape (n_nodes, 3)."""
    return structure_noise_var(enc, graph, coords_t, alpha_bar=alpha_bar).value


def residue_logits_var(enc: EncodedProtein, mask_set):
    b = enc.bound
    mask_set = np.asarray(mask_set, dtype=np.int64).reshape(-1)
    nr = enc.residue_reps.shape[0]
    if mask_set.size and (mask_set.min() < 0 or mask_set.max() >= nr):
        raise ShapeError(f"mask index out of range for {nr} residues")
    h = ad.take(enc.residue_var, mask_set)
    z = ad.relu(ad.matmul(h, b["seq.mlp1.W"]) + b["seq.mlp1.b"])
    return ad.matmul(z, b["seq.mlp2.W"]) + b["seq.mlp2.b"]


def predict_residue_types(enc: EncodedProtein, mask_set, params=None):
    """Softmax over the 20 residue types for each masked residue, shape (|mask|, 20)."""
    logits = residue_logits_var(enc, mask_set).value
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=1, keepdims=True)


def backward(report, params=None) -> GradientBundle:
    """Reverse-mode gradients of a recorded scalar loss w.r.t. every parameter tensor."""
    loss_var = getattr(report, "loss_var", None)
    if loss_var is None:
        raise UsageError("no recorded forward pass to differentiate")
    tape = loss_var.tape
    grads = tape.backward(loss_var)
    if params is not None:
        missing = set(params.tensors) - set(grads)
        if missing:
            raise UsageError(f"loss was not recorded against these parameters ({sorted(missing)[:3]} ...)")
        grads = {k: grads[k] for k in params.tensors}
    return GradientBundle(grads)
