"""Joint structure/sequence diffusion: schedules, forward sampling, posteriors and targets.

Steps are 1-indexed (t = 1..T) throughout; per-step tables are stored
0-indexed, so ``sched.beta[t - 1]`` is beta_t. Boundary conventions:
alpha_bar_0 = 1 and cum_mask_0 = 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MASK, Protein
from .errors import ConsistencyError, GeometryError, InvalidParameterError


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    gamma: np.ndarray       # KL weight of the structure term; +inf at t = 1
    cum_mask: np.ndarray
    step_mask: np.ndarray
    sigma_rev: np.ndarray   # reverse-process variance (posterior variance)

    def _check(self, t, lo=1):
        if not (lo <= t <= self.T):
            raise InvalidParameterError(f"step t={t} outside [{lo}, {self.T}]")

    def alpha_bar_at(self, t):
        """alpha_bar_t with alpha_bar_0 = 1."""
        self._check(t, lo=0)
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def cum_mask_at(self, t):
        """Cumulative mask rate with cum_mask_0 = 0."""
        self._check(t, lo=0)
        return 0.0 if t == 0 else float(self.cum_mask[t - 1])

    def beta_at(self, t):
        self._check(t)
        return float(self.beta[t - 1])

    def step_mask_at(self, t):
        self._check(t)
        return float(self.step_mask[t - 1])

    def mid_mask_step(self, rate=0.5):
        """Step whose cumulative mask rate is closest to ``rate``."""
        return int(np.argmin(np.abs(self.cum_mask - rate))) + 1


def make_schedule(T=100, beta_min=1e-4, beta_max=0.1, mask_min=0.15, mask_max=1.0):
    """Sigmoid variance schedule and linear cumulative mask schedule."""
    if not (isinstance(T, (int, np.integer)) and T >= 2):
        raise InvalidParameterError("T must be an integer >= 2")
    if not (0.0 < beta_min < beta_max < 1.0):
        raise InvalidParameterError("need 0 < beta_min < beta_max < 1")
    if not (0.0 <= mask_min < mask_max <= 1.0):
        raise InvalidParameterError("need 0 <= mask_min < mask_max <= 1")
    x = 10.0 * np.arange(T) / (T - 1) - 5.0
    sig = 1.0 / (1.0 + np.exp(-x))
    sig = (sig - sig[0]) / (sig[-1] - sig[0])
    beta = beta_min + (beta_max - beta_min) * sig
    beta[0], beta[-1] = beta_min, beta_max
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    with np.errstate(divide="ignore"):
        gamma = beta / (2.0 * alpha * (1.0 - alpha_bar_prev))
    sigma_rev = (1.0 - alpha_bar_prev) / (1.0 - alpha_bar) * beta

    cum_mask = mask_min + (mask_max - mask_min) * np.arange(T) / (T - 1)
    cum_mask[-1] = mask_max
    cum_prev = np.concatenate([[0.0], cum_mask[:-1]])
    step_mask = (cum_mask - cum_prev) / (1.0 - cum_prev)
    if mask_max == 1.0:
        step_mask[-1] = 1.0
    return DiffusionSchedule(T=int(T), beta=beta, alpha=alpha, alpha_bar=alpha_bar, gamma=gamma,
                             cum_mask=cum_mask, step_mask=step_mask, sigma_rev=sigma_rev)


# --------------------------------------------------------------------------
# forward process
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NoisyState:
    protein_t: Protein
    t: int
    eps_coord: np.ndarray
    mask_set: np.ndarray


def sample_structure_forward(coords0, t, sched: DiffusionSchedule, rng, eps=None):
    """Closed-form draw from q(R^t | R^0). Returns ``(coords_t, eps)``."""
    sched._check(t)
    coords0 = np.asarray(coords0, dtype=np.float64)
    if eps is None:
        eps = rng.standard_normal(coords0.shape)
    ab = sched.alpha_bar_at(t)
    return np.sqrt(ab) * coords0 + np.sqrt(1.0 - ab) * eps, eps


def structure_step(coords_prev, t, sched: DiffusionSchedule, rng):
    """One transition of q(R^t | R^{t-1})."""
    sched._check(t)
    b = sched.beta_at(t)
    return np.sqrt(1.0 - b) * coords_prev + np.sqrt(b) * rng.standard_normal(np.shape(coords_prev))


def sample_sequence_forward(seq0, t, sched: DiffusionSchedule, rng):
    """Mask each residue independently with the cumulative rate at step t.

    Returns ``(seq_t, mask_set)`` with ``mask_set`` the sorted masked indices.
    """
    sched._check(t)
    seq0 = np.asarray(seq0, dtype=np.int64)
    hit = rng.random(seq0.shape[0]) < sched.cum_mask_at(t)
    if sched.cum_mask_at(t) >= 1.0:
        hit[:] = True
    seq_t = np.where(hit, MASK, seq0)
    return seq_t, np.nonzero(hit)[0]


def sequence_step(seq_prev, t, sched: DiffusionSchedule, rng):
    """One transition of the absorbing chain: unmasked residues mask with rate rho_t."""
    sched._check(t)
    seq_prev = np.asarray(seq_prev, dtype=np.int64)
    hit = (rng.random(seq_prev.shape[0]) < sched.step_mask_at(t)) & (seq_prev != MASK)
    return np.where(hit, MASK, seq_prev)


def apply_mask(seq0, mask_set):
    seq = np.asarray(seq0, dtype=np.int64).copy()
    seq[np.asarray(mask_set, dtype=np.int64)] = MASK
    return seq


def noise_protein(p: Protein, t, sched, coord_rng, mask_rng=None, mask_set=None, eps=None,
                  noise_structure=True) -> NoisyState:
    """Sample P^t from P^0: coordinates and sequence noised independently.

    Pass ``mask_set`` to reuse a mask drawn elsewhere (siamese trajectories).
    With ``noise_structure=False`` coordinates stay clean (sequence-only diffusion).
    """
    if noise_structure:
        coords_t, eps = sample_structure_forward(p.coords, t, sched, coord_rng, eps=eps)
    else:
        coords_t, eps = p.coords.copy(), np.zeros_like(p.coords)
    if mask_set is None:
        seq_t, mask_set = sample_sequence_forward(p.sequence, t, sched, mask_rng)
    else:
        seq_t = apply_mask(p.sequence, mask_set)
    pt = p.with_coords(coords_t).with_sequence(seq_t)
    return NoisyState(protein_t=pt, t=int(t), eps_coord=eps, mask_set=np.asarray(mask_set, dtype=np.int64))


# --------------------------------------------------------------------------
# posteriors
# --------------------------------------------------------------------------

def structure_posterior(coords_t, coords0, t, sched: DiffusionSchedule):
    """Mean and (scalar) variance of q(R^{t-1} | R^t, R^0).

    At t = 1 the posterior collapses onto R^0 (alpha_bar_0 = 1): mean = R^0, var = 0.
    """
    sched._check(t)
    ab_t = sched.alpha_bar_at(t)
    ab_prev = sched.alpha_bar_at(t - 1)
    beta = sched.beta_at(t)
    alpha = 1.0 - beta
    c0 = np.sqrt(ab_prev) * beta / (1.0 - ab_t)
    ct = np.sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab_t)
    mean = c0 * np.asarray(coords0) + ct * np.asarray(coords_t)
    var = (1.0 - ab_prev) / (1.0 - ab_t) * beta
    return mean, var


def sequence_posterior(s_t, s0, t, sched: DiffusionSchedule):
    """q(s^{t-1} | s^t, s^0) for one residue as a dict ``{state: probability}``."""
    sched._check(t)
    if s_t != MASK:
        if s_t != s0:
            raise ConsistencyError(f"unmasked s_t={s_t} differs from s_0={s0}")
        return {int(s_t): 1.0}
    prev = sched.cum_mask_at(t - 1)
    cur = sched.cum_mask_at(t)
    p_mask = prev / cur
    p_orig = (1.0 - prev) * sched.step_mask_at(t) / cur
    out = {MASK: p_mask, int(s0): p_orig}
    return {k: v for k, v in out.items() if v > 0.0} or {MASK: 1.0}


def sequence_reverse(s_t, probs_s0, t, sched: DiffusionSchedule):
    """p(s^{t-1} | P^t) = sum_s0 q(s^{t-1} | s^t, s0) p~(s0) as a dense vector over types + MASK."""
    probs_s0 = np.asarray(probs_s0, dtype=np.float64)
    out = np.zeros(MASK + 1)
    for s0, w in enumerate(probs_s0):
        if w == 0.0:
            continue
        if s_t != MASK and s_t != s0:
            continue
        for state, q in sequence_posterior(s_t, s0, t, sched).items():
            out[state] += w * q
    z = out.sum()
    return out / z if z > 0 else out


def sequence_step_kl(s_t, s0, probs_s0, t, sched: DiffusionSchedule):
    """KL( q(s^{t-1}|s^t,s^0) || p(s^{t-1}|P^t) ) for one residue."""
    q = np.zeros(MASK + 1)
    for state, v in sequence_posterior(s_t, s0, t, sched).items():
        q[state] = v
    p = sequence_reverse(s_t, probs_s0, t, sched)
    support = q > 0
    if np.any(p[support] == 0):
        return float("inf")
    return float(np.sum(q[support] * (np.log(q[support]) - np.log(p[support]))))


# --------------------------------------------------------------------------
# equivariant supervision
# --------------------------------------------------------------------------

def chain_rule_target(coords0, coords_t, t, sched: DiffusionSchedule, pairs):
    """Distance-projected noise target.

    ``pairs`` is an (m, 2) array of unordered neighbour pairs on the noisy
    graph. Each pair contributes (d_t - sqrt(ab) d_0) / sqrt(1 - ab) along
    the unit vector r_i^t - r_j^t to node i, and the opposite to node j.
    """
    sched._check(t)
    coords0 = np.asarray(coords0, dtype=np.float64)
    coords_t = np.asarray(coords_t, dtype=np.float64)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    out = np.zeros_like(coords_t)
    if pairs.shape[0] == 0:
        return out
    i, j = pairs[:, 0], pairs[:, 1]
    diff_t = coords_t[i] - coords_t[j]
    d_t = np.linalg.norm(diff_t, axis=1)
    if np.any(d_t == 0):
        raise GeometryError("coincident neighbour atoms in the noisy structure")
    d_0 = np.linalg.norm(coords0[i] - coords0[j], axis=1)
    ab = sched.alpha_bar_at(t)
    w = (d_t - np.sqrt(ab) * d_0) / np.sqrt(1.0 - ab)
    vec = (w / d_t)[:, None] * diff_t
    np.add.at(out, i, vec)
    np.add.at(out, j, -vec)
    return out
