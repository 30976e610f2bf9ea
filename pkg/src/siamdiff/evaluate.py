"""Metrics (protein-centric F_max, global/mean Spearman) and the fixed-noise denoising probe."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .diffusion import DiffusionSchedule
from .errors import EmptyInputError, InvalidParameterError, UndefinedCorrelationError
from .pretrain import PretrainConfig, diffpret_loss, prepare_protein

DEFAULT_THRESHOLDS = np.round(np.linspace(0.0, 1.0, 101), 10)


@dataclass(frozen=True, eq=False)
class PredictionSet:
    scores: np.ndarray   # (N, F) in [0, 1]
    truth: np.ndarray    # (N, F) bool

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        y = np.asarray(self.truth, dtype=bool)
        if s.ndim != 2 or s.shape != y.shape:
            raise InvalidParameterError(f"scores {s.shape} and truth {y.shape} must be matching (N, F) arrays")
        if s.shape[0] == 0:
            raise EmptyInputError("empty prediction set")
        if not np.all(np.isfinite(s)) or s.min() < 0 or s.max() > 1:
            raise InvalidParameterError("scores must be finite and in [0, 1]")
        if not np.all(y.any(axis=1)):
            raise InvalidParameterError("every protein needs at least one true term")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "truth", y)

    @classmethod
    def from_sets(cls, scores, truth_sets):
        scores = np.asarray(scores, dtype=np.float64)
        y = np.zeros(scores.shape, dtype=bool)
        for i, terms in enumerate(truth_sets):
            y[i, list(terms)] = True
        return cls(scores, y)


def fmax(preds: PredictionSet, thresholds=None) -> float:
    """max over thresholds of the harmonic mean of averaged precision and recall.

    A term is predicted when its score is >= the threshold. Precision is
    averaged over proteins with at least one predicted term, recall over all
    proteins. Thresholds with no predicting protein, or with p + r = 0, are
    skipped; if every threshold is skipped the result is 0.
    """
    thr = DEFAULT_THRESHOLDS if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    s, y = preds.scores, preds.truth
    n_true = y.sum(axis=1)
    best = 0.0
    for tau in thr:
        p = s >= tau
        n_pred = p.sum(axis=1)
        hit = (p & y).sum(axis=1)
        covered = n_pred > 0
        if not covered.any():
            continue
        prec = np.mean(hit[covered] / n_pred[covered])
        rec = np.mean(hit / n_true)
        if prec + rec == 0:
            continue
        best = max(best, 2 * prec * rec / (prec + rec))
    return float(best)


@dataclass(frozen=True, eq=False)
class RankingSet:
    groups: np.ndarray
    predicted: np.ndarray
    truth: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.groups)
        p = np.asarray(self.predicted, dtype=np.float64)
        t = np.asarray(self.truth, dtype=np.float64)
        if not (g.shape == p.shape == t.shape) or p.ndim != 1:
            raise InvalidParameterError("groups, predicted and truth must be equal-length vectors")
        if p.size < 2:
            raise InvalidParameterError("need at least two ranked items")
        object.__setattr__(self, "groups", g)
        object.__setattr__(self, "predicted", p)
        object.__setattr__(self, "truth", t)

    @classmethod
    def from_triples(cls, triples):
        g, p, t = zip(*triples)
        return cls(np.asarray(g), np.asarray(p), np.asarray(t))


def average_ranks(x):
    """1-based ranks with ties given the mean of the ranks they span."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(x.size)
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], x.size]
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = 0.5 * (a + b - 1) + 1.0
    return ranks


def _spearman(pred, truth, label=""):
    rp, rt = average_ranks(pred), average_ranks(truth)
    rp = rp - rp.mean()
    rt = rt - rt.mean()
    den = np.sqrt(np.sum(rp * rp) * np.sum(rt * rt))
    if den == 0:
        raise UndefinedCorrelationError(f"Spearman correlation undefined for constant scores{label}")
    return float(np.clip(np.sum(rp * rt) / den, -1.0, 1.0))


def spearman_global(r: RankingSet) -> float:
    return _spearman(r.predicted, r.truth)


def spearman_mean(r: RankingSet) -> float:
    vals = []
    for g in np.unique(r.groups):
        sel = r.groups == g
        if sel.sum() < 2:
            raise UndefinedCorrelationError(f"group {g!r} has fewer than two items")
        vals.append(_spearman(r.predicted[sel], r.truth[sel], f" in group {g!r}"))
    return float(np.mean(vals))


# --------------------------------------------------------------------------
# denoising probe
# --------------------------------------------------------------------------

PROBE_FIELDS = ("t", "struct_loss", "seq_loss", "seq_accuracy", "num_masked")


def denoising_probe(params, dataset, sched: DiffusionSchedule, t_list, cfg: PretrainConfig | None = None,
                    repeats=1, seed=0, sequence_only=False):
    """Losses and masked-residue accuracy at fixed noise steps, without updates.

    Accuracy is pooled over every masked residue of every protein and repeat;
    the sequence loss is averaged over draws that masked at least one residue.
    ``sequence_only`` leaves the structure clean (sequence diffusion alone).
    """
    cfg = (cfg or PretrainConfig(mode="diffpret")).with_(mode="diffpret", noise_structure=not sequence_only)
    proteins = [prepare_protein(p, cfg) for p in dataset]
    if not proteins:
        raise EmptyInputError("empty probe set")
    rows = []
    for t in t_list:
        sched._check(int(t))
        ls, lq, correct, masked, n, n_seq = 0.0, 0.0, 0.0, 0, 0, 0
        for i, p in enumerate(proteins):
            for k in range(repeats):
                rep = diffpret_loss(p, int(t), params, sched, cfg, seed=[seed, int(t), i, k])
                ls += rep.loss_struct
                n += 1
                if rep.num_masked:
                    lq += rep.loss_seq
                    n_seq += 1
                    correct += rep.denoise_accuracy * rep.num_masked
                    masked += rep.num_masked
        rows.append({"t": int(t), "struct_loss": ls / n, "seq_loss": lq / n_seq if n_seq else float("nan"),
                     "seq_accuracy": correct / masked if masked else float("nan"), "num_masked": masked})
    return rows


def probe_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=PROBE_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(float(r[k])) if k not in ("t", "num_masked") else r[k]) for k in PROBE_FIELDS})
    return buf.getvalue()
