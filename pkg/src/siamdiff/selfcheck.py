"""Built-in invariant checks, run by ``siamdiff selfcheck``.

Each check prints one line: PASS/FAIL, its name, the measured error and the bound.
"""
from __future__ import annotations

import itertools
import sys

import numpy as np

from . import _kernels
from .checkpoint import Checkpoint, from_bytes, to_bytes
from .core import RigidTransform, transform_protein
from .diffusion import (
    chain_rule_target,
    make_schedule,
    sample_structure_forward,
    sequence_posterior,
    structure_posterior,
    structure_step,
)
from .encoder import Architecture, ModelParams, backward, encode, predict_structure_noise
from .errors import IntegrityError
from .evaluate import PredictionSet, RankingSet, fmax, spearman_global
from .ingest import GraphConfig, build_graph, load_toy_set
from .pretrain import PretrainConfig, prepare_protein, siamdiff_loss


def _equivariance(n_transforms):
    p = load_toy_set()[0].ca_only()
    cfg = GraphConfig(level="residue")
    prm = ModelParams.init(Architecture.from_graph_config(cfg), seed=3)
    sched = make_schedule()
    rng = np.random.default_rng(11)
    coords0 = p.coords
    coords_t, _ = sample_structure_forward(coords0, 30, sched, rng)
    pt = p.with_coords(coords_t)
    g = build_graph(pt, cfg)
    enc = encode(g, prm)
    eps = predict_structure_noise(enc, g, g.coords, alpha_bar=sched.alpha_bar_at(30))
    tgt = chain_rule_target(coords0, coords_t, 30, sched, g.neighbor_pairs())
    inv = eq = eqt = 0.0
    for _ in range(n_transforms):
        T = RigidTransform.random(rng)
        g2 = build_graph(transform_protein(pt, T), cfg)
        enc2 = encode(g2, prm)
        inv = max(inv, float(np.abs(enc2.atom_reps - enc.atom_reps).max()))
        eps2 = predict_structure_noise(enc2, g2, g2.coords, alpha_bar=sched.alpha_bar_at(30))
        eq = max(eq, float(np.abs(eps2 - eps @ T.rotation.T).max()))
        tgt2 = chain_rule_target(T.apply(coords0), T.apply(coords_t), 30, sched, g2.neighbor_pairs())
        eqt = max(eqt, float(np.abs(tgt2 - tgt @ T.rotation.T).max()))
    return [("encoder_invariance", inv, 1e-9), ("noise_head_equivariance", eq, 1e-8),
            ("chain_rule_target_equivariance", eqt, 1e-8)]


def _forward_marginal(draws):
    sched = make_schedule()
    rng = np.random.default_rng(5)
    x0 = np.array([[1.5, -2.0, 0.5]])
    t = 10
    x = np.repeat(x0, draws, axis=0)
    for s in range(1, t + 1):
        x = structure_step(x, s, sched, rng)
    ab = sched.alpha_bar_at(t)
    mean_err = np.abs(x.mean(0) - np.sqrt(ab) * x0[0]) / np.sqrt((1 - ab) / draws)
    var_err = np.abs(x.var(0) - (1 - ab)) / ((1 - ab) * np.sqrt(2.0 / draws))
    return [("forward_marginal_sigmas", float(max(mean_err.max(), var_err.max())), 3.0)]


def _posteriors():
    sched = make_schedule()
    t, x0, xt = 20, 0.7, 0.3
    ab_prev, beta = sched.alpha_bar_at(t - 1), sched.beta_at(t)
    grid = np.linspace(-6, 6, 120001)
    logw = -0.5 * (grid - np.sqrt(ab_prev) * x0) ** 2 / (1 - ab_prev) \
        - 0.5 * (xt - np.sqrt(1 - beta) * grid) ** 2 / beta
    w = np.exp(logw - logw.max())
    w /= w.sum()
    m_grid = float(np.sum(w * grid))
    v_grid = float(np.sum(w * (grid - m_grid) ** 2))
    mean, var = structure_posterior(np.array([xt]), np.array([x0]), t, sched)
    err_s = max(abs(mean[0] - m_grid), abs(var - v_grid))

    small = make_schedule(T=3, mask_min=0.2, mask_max=1.0)
    err_q = 0.0
    for t in (2, 3):
        # enumerate absorbing paths of one residue over steps 0..t
        joint = {}
        for path in itertools.product([0, 1], repeat=t):  # 1 = masked at that step
            if any(path[k] > path[k + 1] for k in range(t - 1)):
                continue
            pr, prev = 1.0, 0
            for k, m in enumerate(path, start=1):
                rho = small.step_mask_at(k)
                pr *= (rho if m else 1 - rho) if prev == 0 else 1.0
                prev = m
            if path[-1] == 1:
                key = path[-2]
                joint[key] = joint.get(key, 0.0) + pr
        z = sum(joint.values())
        got = sequence_posterior(20, 1, t, small)
        err_q = max(err_q, abs(got.get(20, 0.0) - joint.get(1, 0.0) / z), abs(got.get(1, 0.0) - joint.get(0, 0.0) / z))
    return [("structure_posterior_grid", float(err_s), 1e-3), ("sequence_posterior_paths", float(err_q), 1e-12)]


def _active_sets(report):
    return np.concatenate([m.ravel() for m in report.loss_var.tape.relu_masks])


def finite_difference_check(loss_fn, params, n_coords, h=1e-4, seed=0, abs_tol=1e-4, rel_tol=1e-3,
                            max_draws=None):
    """Central differences on ``n_coords`` random parameter coordinates.

    ``loss_fn(params)`` must return a LossReport. A draw whose +h and -h
    evaluations switch any ReLU on or off straddles a kink, where the central
    difference does not estimate the derivative; such draws are counted and
    replaced by fresh ones. Returns a dict with the worst error ratio
    ``|fd - analytic| / max(abs_tol, rel_tol * |fd|)`` over smooth draws.
    """
    rep = loss_fn(params)
    grads = backward(rep, params)
    rng = np.random.default_rng(seed)
    names = params.names
    sizes = np.array([params[n].size for n in names], dtype=np.float64)
    max_draws = max_draws or 5 * n_coords
    worst, checked, kinks, worst_at = 0.0, 0, 0, None
    while checked < n_coords:
        if checked + kinks >= max_draws:
            raise RuntimeError(f"only {checked} smooth coordinates in {max_draws} draws")
        k = checked + kinks
        # one draw per tensor first, then proportional to tensor size
        name = names[k] if k < len(names) else names[rng.choice(len(names), p=sizes / sizes.sum())]
        idx = tuple(int(rng.integers(s)) for s in params[name].shape)
        evals = []
        for sgn in (1, -1):
            q = params.copy()
            q.tensors[name][idx] += sgn * h
            evals.append(loss_fn(q))
        if not np.array_equal(_active_sets(evals[0]), _active_sets(evals[1])):
            kinks += 1
            continue
        fd = (evals[0].loss_total - evals[1].loss_total) / (2 * h)
        an = float(grads[name][idx])
        r = abs(fd - an) / max(abs_tol, rel_tol * abs(fd))
        if r > worst:
            worst, worst_at = r, (name, idx, fd, an)
        checked += 1
    return {"worst_ratio": worst, "checked": checked, "kinks_skipped": kinks, "worst_at": worst_at}


def gradient_fixture(hidden_dim=64, num_layers=3, t=25, seed=2):
    """3-residue atom-level siamdiff loss used for gradient checks."""
    p = load_toy_set()[0].truncate(3)
    cfg = PretrainConfig(mode="siamdiff", level="atom")
    p = prepare_protein(p, cfg)
    sched = make_schedule()
    arch = Architecture.from_graph_config(cfg.graph_config(), hidden_dim=hidden_dim, num_layers=num_layers)
    prm = ModelParams.init(arch, seed=1)
    return prm, (lambda q: siamdiff_loss(p, t, q, sched, cfg, seed=seed))


def _gradients(n_coords):
    prm, loss_fn = gradient_fixture(hidden_dim=8, num_layers=2)
    res = finite_difference_check(loss_fn, prm, n_coords)
    return [("finite_difference_ratio", float(res["worst_ratio"]), 1.0)]


def _metrics():
    perfect = PredictionSet.from_sets([[1, 0, 0, 1], [0, 1, 0, 0]], [[0, 3], [1]])
    rs = RankingSet(np.zeros(5), np.arange(5.0), -np.arange(5.0))
    return [("fmax_perfect", abs(fmax(perfect) - 1.0), 1e-12),
            ("spearman_reversed", abs(spearman_global(rs) + 1.0), 1e-12)]


def _checkpoint():
    cfg = GraphConfig(level="residue")
    prm = ModelParams.init(Architecture.from_graph_config(cfg, hidden_dim=8, num_layers=1), seed=0)
    blob = to_bytes(Checkpoint(prm, "abc"))
    again = to_bytes(from_bytes(blob))
    bad = bytearray(blob)
    bad[-1] ^= 0xFF
    try:
        from_bytes(bytes(bad))
        caught = False
    except IntegrityError:
        caught = True
    return [("checkpoint_roundtrip", 0.0 if blob == again else 1.0, 0.0),
            ("checkpoint_corruption_detected", 0.0 if caught else 1.0, 0.0)]


def _kernels_agree():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(60, 3)) * 4
    a = _kernels.radius_pairs_numba(x, 4.5)
    b = _kernels.radius_pairs_numpy(x, 4.5)
    same = all(np.array_equal(u, v) for u, v in zip(a, b))
    same &= np.array_equal(_kernels.knn_indices_numba(x, 5), _kernels.knn_indices_numpy(x, 5))
    v = rng.normal(size=(200, 4))
    idx = rng.integers(0, 30, 200)
    err = float(np.abs(_kernels.segment_sum_numba(v, idx, 30) - _kernels.segment_sum_numpy(v, idx, 30)).max())
    return [("kernel_flavours_agree", err if same else 1.0, 1e-12)]


def run_selfcheck(quick=False, out=None) -> bool:
    out = out or sys.stdout
    checks = [
        lambda: _equivariance(5 if quick else 20),
        lambda: _forward_marginal(20000 if quick else 100000),
        _posteriors,
        lambda: _gradients(10 if quick else 40),
        _metrics,
        _checkpoint,
        _kernels_agree,
    ]
    ok = True
    for fn in checks:
        try:
            results = fn()
        except Exception as exc:  # report and keep going
            print(f"FAIL  {getattr(fn, '__name__', 'check')}  raised {type(exc).__name__}: {exc}", file=out)
            ok = False
            continue
        for name, err, bound in results:
            passed = err <= bound
            ok &= passed
            print(f"{'PASS' if passed else 'FAIL'}  {name:<34s} err={err:.3e}  bound={bound:.1e}", file=out)
    print("selfcheck " + ("passed" if ok else "FAILED"), file=out)
    return ok


if __name__ == "__main__":
    sys.exit(0 if run_selfcheck() else 1)
