"""Denoising objectives (single trajectory and siamese), conformer simulation and the training loop."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from . import autodiff as ad
from .core import Protein, bonded_matrix, perturb_torsional, sample_wrapped_normal
from .diffusion import (
    DiffusionSchedule,
    NoisyState,
    chain_rule_target,
    noise_protein,
    sample_sequence_forward,
)
from .encoder import (
    Bound,
    GradientBundle,
    ModelParams,
    backward,
    encode,
    residue_logits_var,
    structure_noise_var,
)
from .errors import (
    ClashError,
    ConfigError,
    DivergenceError,
    EmptyInputError,
    InvalidParameterError,
    StructuralError,
)
from .ingest import GraphConfig, build_graph

# (residue, atom) defaults for max length and per-device batch size
MAX_LENGTH = {"residue": 150, "atom": 100}
BATCH_SIZE = {("diffpret", "residue"): 16, ("diffpret", "atom"): 64,
              ("siamdiff", "residue"): 16, ("siamdiff", "atom"): 32}


@dataclass(frozen=True)
class PretrainConfig:
    mode: str = "siamdiff"
    level: str = "residue"
    T: int = 100
    stage_boundary: int = 10
    stage1_fraction: float = 0.8
    stage_schedule: tuple | None = None    # explicit ((stage, first_epoch, end_epoch), ...)
    torsion_sigma: float = 0.1 * math.pi
    residue_gauss_sigma: float = 0.3
    clash_min_dist: float = 1.2
    clash_max_retries: int = 20
    learning_rate: float = 1e-4
    optimizer: str = "adam"
    epochs: int = 1
    batch_size: int | None = None
    max_residues_per_protein: int | None = None
    seed: int = 0
    seq_loss_reduction: str = "mean"
    struct_loss_reduction: str = "mean"
    tied_noise: bool = False
    noise_structure: bool = True     # False gives sequence-only diffusion
    hidden_dim: int = 64
    num_layers: int = 3
    line_graph: bool = True
    graph: GraphConfig | None = None   # full graph settings; level must agree

    def __post_init__(self):
        if self.mode not in ("diffpret", "siamdiff"):
            raise ConfigError(f"mode must be diffpret or siamdiff, got {self.mode!r}")
        if self.level not in ("atom", "residue"):
            raise ConfigError(f"level must be atom or residue, got {self.level!r}")
        if not (1 <= self.stage_boundary <= self.T):
            raise ConfigError("stage_boundary must lie in [1, T]")
        if not (self.torsion_sigma > 0 and self.residue_gauss_sigma > 0):
            raise ConfigError("perturbation sigmas must be positive")
        if not (0.0 <= self.stage1_fraction <= 1.0):
            raise ConfigError("stage1_fraction must lie in [0, 1]")
        if self.clash_min_dist < 0 or self.clash_max_retries < 1:
            raise ConfigError("clash_min_dist must be >= 0 and clash_max_retries >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        for name in ("seq_loss_reduction", "struct_loss_reduction"):
            if getattr(self, name) not in ("mean", "sum"):
                raise ConfigError(f"{name} must be mean or sum")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_residues_per_protein is not None and self.max_residues_per_protein < 1:
            raise ConfigError("max_residues_per_protein must be >= 1")
        if self.graph is not None and self.graph.level != self.level:
            raise ConfigError("graph level does not match the training level")

    @property
    def effective_batch_size(self):
        return self.batch_size or BATCH_SIZE[(self.mode, self.level)]

    @property
    def effective_max_residues(self):
        return self.max_residues_per_protein or MAX_LENGTH[self.level]

    def graph_config(self):
        return self.graph or GraphConfig(level=self.level, line_graph=self.line_graph)

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class TrajectorySample:
    state1: NoisyState
    state2: NoisyState | None
    shared_t: int
    shared_mask: np.ndarray


@dataclass(eq=False)
class LossReport:
    loss_struct: float
    loss_seq: float
    loss_total: float
    t: int
    denoise_accuracy: float
    num_masked: int
    per_direction: tuple | None = None   # ((struct_21, seq_21), (struct_12, seq_12))
    seq_loss_defined: bool = True
    sample: TrajectorySample | None = None
    loss_var: ad.Var | None = field(default=None, repr=False)

    def as_record(self):
        acc = None if math.isnan(self.denoise_accuracy) else self.denoise_accuracy
        return {"t": int(self.t), "loss_struct": self.loss_struct, "loss_seq": self.loss_seq,
                "loss_total": self.loss_total, "denoise_accuracy": acc}


# --------------------------------------------------------------------------
# random streams
# --------------------------------------------------------------------------

def rng_streams(seed):
    """Independent generators for (conformer, coords of trajectory 1, coords of trajectory 2, mask)."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(4)]


def prepare_protein(p: Protein, cfg: PretrainConfig) -> Protein:
    """Prefix-truncate and, at residue level, keep alpha carbons only."""
    q = p.truncate(cfg.effective_max_residues)
    if cfg.level == "residue":
        q = q.ca_only()
    return q


# --------------------------------------------------------------------------
# conformers
# --------------------------------------------------------------------------

def simulate_conformer(p: Protein, cfg: PretrainConfig, rng) -> Protein:
    """A correlated conformer: side-chain torsion noise (atom level) or coordinate jitter (residue level)."""
    if cfg.level == "residue":
        if any(name != "CA" for name in p.atom_names):
            raise StructuralError("residue-level conformers need an alpha-carbon-only protein")
        return p.with_coords(p.coords + cfg.residue_gauss_sigma * rng.standard_normal(p.coords.shape))
    bonded = bonded_matrix(p)
    best = None
    for _ in range(cfg.clash_max_retries):
        eps = sample_wrapped_normal(cfg.torsion_sigma, (p.num_residues, 4), rng)
        q = perturb_torsional(p, eps)
        dist, i, j = _kernels.closest_unbonded_pair(q.coords, bonded)
        if dist >= cfg.clash_min_dist:
            return q
        if best is None or dist > best[0]:
            best = (dist, i, j)
    dist, i, j = best
    raise ClashError(
        f"no clash-free conformer after {cfg.clash_max_retries} tries; closest pair "
        f"{p.atom_names[i]}/{p.residue_label(p.atom_to_residue[i])} - "
        f"{p.atom_names[j]}/{p.residue_label(p.atom_to_residue[j])} at {dist:.3f} A",
        pair=(int(i), int(j)), distance=float(dist))


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------

def _bind(params):
    return params if isinstance(params, Bound) else params.bind()


def tie_aware_hits(logits, truth):
    """Expected number of correct argmax predictions when ties are broken uniformly at random."""
    top = logits == logits.max(axis=1, keepdims=True)
    return float(np.sum(top[np.arange(len(truth)), truth] / top.sum(axis=1)))


def _direction_terms(enc_from, graph_to, state_to: NoisyState, coords0_to, seq0, t, sched, cfg):
    """Structure and sequence losses for denoising ``state_to`` from representations ``enc_from``."""
    tape = enc_from.bound.tape
    n = graph_to.num_nodes
    if cfg.noise_structure:
        pairs = graph_to.neighbor_pairs()
        target = chain_rule_target(coords0_to, graph_to.coords, t, sched, pairs)
        pred = structure_noise_var(enc_from, graph_to, graph_to.coords, alpha_bar=sched.alpha_bar_at(t))
        ls = ad.square_sum(ad.sub(pred, target))
        if cfg.struct_loss_reduction == "mean":
            ls = ls * (1.0 / n)
    else:
        ls = tape.const(0.0)

    mask = state_to.mask_set
    if mask.size:
        logits = residue_logits_var(enc_from, mask)
        logp = ad.log_softmax(logits)
        truth = np.asarray(seq0)[mask]
        lq = ad.sum_all(ad.pick(logp, np.arange(mask.size), truth)) * -1.0
        if cfg.seq_loss_reduction == "mean":
            lq = lq * (1.0 / mask.size)
        correct = tie_aware_hits(logits.value, truth)
    else:
        lq = tape.const(0.0)
        correct = 0
    return ls, lq, correct


def diffpret_loss(p: Protein, t, params, sched: DiffusionSchedule, cfg: PretrainConfig, seed=0,
                  graph_cfg: GraphConfig | None = None, eps=None) -> LossReport:
    """Single-trajectory joint denoising loss at step t.

    ``p`` should already be prepared for ``cfg.level`` (see ``prepare_protein``).
    Pass ``eps`` to force the coordinate noise draw.
    """
    sched._check(t)
    graph_cfg = graph_cfg or cfg.graph_config()
    b = _bind(params)
    _, rng_c1, _, rng_m = rng_streams(seed)
    state = noise_protein(p, t, sched, rng_c1, rng_m, eps=eps, noise_structure=cfg.noise_structure)
    g = build_graph(state.protein_t, graph_cfg)
    enc = encode(g, b, p.num_residues)
    ls, lq, correct = _direction_terms(enc, g, state, _node_coords(p, graph_cfg), p.sequence, t, sched, cfg)
    total = ad.add(ls, lq)
    k = int(state.mask_set.size)
    s, q = float(ls.value), float(lq.value)
    return LossReport(
        loss_struct=s, loss_seq=q, loss_total=s + q, t=int(t),
        denoise_accuracy=correct / k if k else float("nan"), num_masked=k,
        seq_loss_defined=k > 0,
        sample=TrajectorySample(state, None, int(t), state.mask_set),
        loss_var=total,
    )


def _node_coords(p: Protein, graph_cfg: GraphConfig):
    return p.coords if graph_cfg.level == "atom" else p.coords[p.ca_indices()]


def mutual_loss(p1: Protein, p2: Protein, t, params, sched, cfg: PretrainConfig, mask_set, eps1, eps2,
                graph_cfg: GraphConfig | None = None) -> LossReport:
    """Mutual denoising between two conformers with a shared mask and given coordinate noise."""
    graph_cfg = graph_cfg or cfg.graph_config()
    b = _bind(params)
    s1 = noise_protein(p1, t, sched, None, mask_set=mask_set, eps=eps1, noise_structure=cfg.noise_structure)
    s2 = noise_protein(p2, t, sched, None, mask_set=mask_set, eps=eps2, noise_structure=cfg.noise_structure)
    g1 = build_graph(s1.protein_t, graph_cfg)
    g2 = build_graph(s2.protein_t, graph_cfg)
    e1 = encode(g1, b, p1.num_residues)
    e2 = encode(g2, b, p2.num_residues)
    s21, q21, c21 = _direction_terms(e2, g1, s1, _node_coords(p1, graph_cfg), p1.sequence, t, sched, cfg)
    s12, q12, c12 = _direction_terms(e1, g2, s2, _node_coords(p2, graph_cfg), p2.sequence, t, sched, cfg)
    ls = ad.add(s21, s12) * 0.5
    lq = ad.add(q21, q12) * 0.5
    total = ad.add(ls, lq)
    k = int(np.asarray(mask_set).size)
    s, q = float(ls.value), float(lq.value)
    return LossReport(
        loss_struct=s, loss_seq=q, loss_total=s + q, t=int(t),
        denoise_accuracy=(c21 + c12) / (2 * k) if k else float("nan"), num_masked=k,
        per_direction=((float(s21.value), float(q21.value)), (float(s12.value), float(q12.value))),
        seq_loss_defined=k > 0,
        sample=TrajectorySample(s1, s2, int(t), np.asarray(mask_set, dtype=np.int64)),
        loss_var=total,
    )


def siamdiff_loss(p: Protein, t, params, sched: DiffusionSchedule, cfg: PretrainConfig, seed=0,
                  graph_cfg: GraphConfig | None = None, conformer: Protein | None = None) -> LossReport:
    """Siamese-trajectory loss: simulate a conformer, noise both with one mask, denoise each from the other."""
    sched._check(t)
    rng_conf, rng_c1, rng_c2, rng_m = rng_streams(seed)
    p2 = conformer if conformer is not None else simulate_conformer(p, cfg, rng_conf)
    _, mask_set = sample_sequence_forward(p.sequence, t, sched, rng_m)
    shape = p.coords.shape
    eps1 = rng_c1.standard_normal(shape)
    eps2 = eps1 if cfg.tied_noise else rng_c2.standard_normal(shape)
    return mutual_loss(p, p2, t, params, sched, cfg, mask_set, eps1, eps2, graph_cfg=graph_cfg)


def compute_loss(p, t, params, sched, cfg: PretrainConfig, seed=0, graph_cfg=None) -> LossReport:
    if cfg.mode == "siamdiff":
        return siamdiff_loss(p, t, params, sched, cfg, seed, graph_cfg)
    return diffpret_loss(p, t, params, sched, cfg, seed, graph_cfg)


# --------------------------------------------------------------------------
# noise-level curriculum
# --------------------------------------------------------------------------

def sample_noise_level(stage, sched: DiffusionSchedule, cfg: PretrainConfig, rng):
    """Stage 1 draws t uniformly from [boundary, T]; stage 2 from [1, boundary - 1]."""
    if stage not in (1, 2):
        raise InvalidParameterError(f"stage must be 1 or 2, got {stage}")
    k = cfg.stage_boundary
    if stage == 1:
        return int(rng.integers(k, sched.T + 1))
    if k <= 1:
        raise ConfigError("stage_boundary = 1 leaves no steps for stage 2")
    return int(rng.integers(1, k))


def stage_for_epoch(epoch, cfg: PretrainConfig):
    if cfg.stage_schedule:
        for stage, lo, hi in cfg.stage_schedule:
            if lo <= epoch < hi:
                return int(stage)
        raise ConfigError(f"epoch {epoch} not covered by stage_schedule")
    n1 = int(round(cfg.stage1_fraction * cfg.epochs))
    if cfg.stage_boundary <= 1:
        return 1
    return 1 if epoch < n1 else 2


# --------------------------------------------------------------------------
# optimizers
# --------------------------------------------------------------------------

class SGD:
    def __init__(self, lr):
        self.lr = float(lr)

    def step(self, params: ModelParams, grads: GradientBundle) -> ModelParams:
        return params.replace({k: v - self.lr * grads[k] for k, v in params.tensors.items()})


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = float(lr), beta1, beta2, eps
        self.m, self.v, self.k = {}, {}, 0

    def step(self, params: ModelParams, grads: GradientBundle) -> ModelParams:
        self.k += 1
        c1 = 1.0 - self.beta1 ** self.k
        c2 = 1.0 - self.beta2 ** self.k
        out = {}
        for name, w in params.tensors.items():
            g = grads[name]
            m = self.m.get(name, 0.0) * self.beta1 + (1.0 - self.beta1) * g
            v = self.v.get(name, 0.0) * self.beta2 + (1.0 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            out[name] = w - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params.replace(out)


def make_optimizer(cfg: PretrainConfig):
    return Adam(cfg.learning_rate) if cfg.optimizer == "adam" else SGD(cfg.learning_rate)


# --------------------------------------------------------------------------
# training loop
# --------------------------------------------------------------------------

@dataclass(eq=False)
class TrainResult:
    params: ModelParams
    log: list
    epoch_summary: list


def run_pretraining(dataset, cfg: PretrainConfig, params_init: ModelParams, sched: DiffusionSchedule,
                    log_path=None, dump_dir=None, on_epoch_end=None) -> TrainResult:
    """Mini-batch training over ``dataset`` (list of Protein).

    One noise step per protein per update. Gradients are averaged over the
    batch in protein order. Per-protein randomness comes from
    SeedSequence([seed, epoch, protein index]).
    """
    if not dataset:
        raise EmptyInputError("empty training set")
    if sched.T != cfg.T:
        raise ConfigError(f"schedule has T={sched.T} but config says T={cfg.T}")
    proteins = [prepare_protein(p, cfg) for p in dataset]
    graph_cfg = cfg.graph_config()
    opt = make_optimizer(cfg)
    params = params_init.copy()
    bs = cfg.effective_batch_size
    log, summary = [], []
    fh = open(log_path, "a") if log_path else None
    try:
        for epoch in range(cfg.epochs):
            stage = stage_for_epoch(epoch, cfg)
            order = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch, 0x0dd])).permutation(len(proteins))
            ep = []
            for bi, lo in enumerate(range(0, len(order), bs)):
                idx = order[lo: lo + bs]
                acc = None
                for i in idx:
                    ss = np.random.SeedSequence([cfg.seed, epoch, int(i)])
                    t_seed, loss_seed = ss.spawn(2)
                    t = sample_noise_level(stage, sched, cfg, np.random.default_rng(t_seed))
                    rep = compute_loss(proteins[i], t, params, sched, cfg, loss_seed, graph_cfg)
                    if not np.isfinite(rep.loss_total):
                        _diverge(params, dump_dir, epoch, bi, int(i), rep)
                    g = backward(rep, params)
                    if not g.all_finite():
                        _diverge(params, dump_dir, epoch, bi, int(i), rep)
                    acc = g.grads if acc is None else {k: acc[k] + g[k] for k in acc}
                    rec = {"epoch": epoch, "batch": bi, "protein": int(i), "stage": stage, **rep.as_record()}
                    log.append(rec)
                    ep.append(rec)
                    if fh:
                        fh.write(json.dumps(rec, sort_keys=True) + "\n")
                scale = 1.0 / len(idx)
                params = opt.step(params, GradientBundle({k: v * scale for k, v in acc.items()}))
            summary.append(_summarise(epoch, stage, ep))
            if fh:
                fh.flush()
            if on_epoch_end is not None:
                on_epoch_end(epoch, params)
    finally:
        if fh:
            fh.close()
    return TrainResult(params=params, log=log, epoch_summary=summary)


def _summarise(epoch, stage, records):
    out = {"epoch": epoch, "stage": stage}
    for k in ("loss_struct", "loss_seq", "loss_total"):
        out[k] = float(np.mean([r[k] for r in records]))
    accs = [r["denoise_accuracy"] for r in records if r["denoise_accuracy"] is not None]
    out["denoise_accuracy"] = float(np.mean(accs)) if accs else None
    return out


def _diverge(params, dump_dir, epoch, batch, protein, rep):
    path = None
    if dump_dir:
        os.makedirs(dump_dir, exist_ok=True)
        path = os.path.join(dump_dir, f"divergence_e{epoch}_b{batch}.npz")
        np.savez(path, **params.tensors)
    raise DivergenceError(
        f"non-finite loss or gradient at epoch {epoch}, batch {batch}, protein {protein}, t={rep.t}",
        dump_path=path)
