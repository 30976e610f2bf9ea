"""Geometry primitives, the wrapped normal, and the protein domain model."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError, ShapeError, StructuralError
from .residues import (
    BACKBONE_ATOMS,
    CHI_ATOMS,
    MASK,
    NUM_RESIDUE_TYPES,
    ONE_LETTER,
    MASK_LETTER,
    RESIDUE_NAMES,
    SIDECHAIN_DEPTH,
)

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class ChiBond:
    """One rotatable side-chain bond: rotation axis ``axis[0] -> axis[1]`` moves ``dependents``."""

    axis: tuple[int, int]
    dependents: np.ndarray


@dataclass(frozen=True, eq=False)
class Protein:
    sequence: np.ndarray            # (n_r,) int codes in [0, 20], 20 == MASK
    coords: np.ndarray              # (n_a, 3) Angstrom
    atom_names: tuple[str, ...]
    elements: tuple[str, ...]
    atom_to_residue: np.ndarray     # (n_a,)
    residue_atom_spans: np.ndarray  # (n_r, 2) half-open
    chi_topology: tuple[tuple[ChiBond, ...], ...] = ()
    chain_ids: tuple[str, ...] = ()
    residue_numbers: tuple[int, ...] = ()

    def __post_init__(self):
        seq = np.asarray(self.sequence, dtype=np.int64)
        coords = np.asarray(self.coords, dtype=np.float64)
        object.__setattr__(self, "sequence", seq)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "atom_to_residue", np.asarray(self.atom_to_residue, dtype=np.int64))
        object.__setattr__(self, "residue_atom_spans", np.asarray(self.residue_atom_spans, dtype=np.int64).reshape(-1, 2))
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise ShapeError(f"coords must be (n_a, 3), got {coords.shape}")
        if not np.isfinite(coords).all():
            raise StructuralError("coordinates contain NaN or infinity")
        n_a, n_r = coords.shape[0], seq.shape[0]
        if len(self.atom_names) != n_a or self.atom_to_residue.shape[0] != n_a:
            raise ShapeError("atom_names / atom_to_residue length does not match coords")
        if self.residue_atom_spans.shape[0] != n_r:
            raise ShapeError("one atom span per residue required")
        if n_r and (self.residue_atom_spans[0, 0] != 0 or self.residue_atom_spans[-1, 1] != n_a
                    or np.any(self.residue_atom_spans[1:, 0] != self.residue_atom_spans[:-1, 1])):
            raise StructuralError("residue spans do not partition the atoms")
        if seq.size and (seq.min() < 0 or seq.max() > MASK):
            raise StructuralError("residue codes out of range")
        if not self.chain_ids:
            object.__setattr__(self, "chain_ids", ("A",) * n_r)
        if not self.residue_numbers:
            object.__setattr__(self, "residue_numbers", tuple(range(1, n_r + 1)))
        if not self.elements:
            object.__setattr__(self, "elements", tuple(n[:1] for n in self.atom_names))

    @property
    def num_residues(self):
        return int(self.sequence.shape[0])

    @property
    def num_atoms(self):
        return int(self.coords.shape[0])

    def with_coords(self, coords):
        return _replace(self, coords=np.asarray(coords, dtype=np.float64))

    def with_sequence(self, sequence):
        return _replace(self, sequence=np.asarray(sequence, dtype=np.int64))

    def sequence_string(self):
        return "".join(MASK_LETTER if s == MASK else ONE_LETTER[s] for s in self.sequence)

    def atom_index(self, residue, name):
        lo, hi = self.residue_atom_spans[residue]
        for a in range(lo, hi):
            if self.atom_names[a] == name:
                return a
        return -1

    def ca_indices(self):
        idx = np.array([self.atom_index(r, "CA") for r in range(self.num_residues)], dtype=np.int64)
        if np.any(idx < 0):
            bad = int(np.nonzero(idx < 0)[0][0])
            raise StructuralError(f"residue {self.residue_label(bad)} has no CA atom")
        return idx

    def residue_label(self, r):
        code = self.sequence[r]
        name = "MSK" if code == MASK else RESIDUE_NAMES[code]
        return f"{name}{self.residue_numbers[r]}{self.chain_ids[r]}"

    def backbone_mask(self):
        return np.array([n in BACKBONE_ATOMS for n in self.atom_names])

    def truncate(self, max_residues):
        """Keep the first ``max_residues`` residues."""
        if self.num_residues <= max_residues:
            return self
        n_a = int(self.residue_atom_spans[max_residues - 1, 1])
        return _replace(
            self,
            sequence=self.sequence[:max_residues],
            coords=self.coords[:n_a],
            atom_names=self.atom_names[:n_a],
            elements=self.elements[:n_a],
            atom_to_residue=self.atom_to_residue[:n_a],
            residue_atom_spans=self.residue_atom_spans[:max_residues],
            chi_topology=self.chi_topology[:max_residues] if self.chi_topology else (),
            chain_ids=self.chain_ids[:max_residues],
            residue_numbers=self.residue_numbers[:max_residues],
        )

    def ca_only(self):
        """Alpha-carbon-only view, one atom per residue (no rotatable bonds)."""
        ca = self.ca_indices()
        n_r = self.num_residues
        return Protein(
            sequence=self.sequence.copy(),
            coords=self.coords[ca],
            atom_names=("CA",) * n_r,
            elements=("C",) * n_r,
            atom_to_residue=np.arange(n_r),
            residue_atom_spans=np.stack([np.arange(n_r), np.arange(1, n_r + 1)], axis=1),
            chi_topology=tuple(() for _ in range(n_r)),
            chain_ids=self.chain_ids,
            residue_numbers=self.residue_numbers,
        )


def _replace(p: Protein, **changes) -> Protein:
    kw = {f: getattr(p, f) for f in p.__dataclass_fields__}
    kw.update(changes)
    return Protein(**kw)


# --------------------------------------------------------------------------
# chi topology
# --------------------------------------------------------------------------

def build_chi_topology(residue_name, atom_names, coords, offset=0):
    """Rotatable bonds of one residue as a tuple of ChiBond with global atom indices.

    Hydrogens inherit the mobility of the nearest heavy atom in the residue.
    A chi whose defining atoms are not all present is dropped, together with
    every chi after it.
    """
    pos = {name: i for i, name in enumerate(atom_names)}
    depth_table = SIDECHAIN_DEPTH.get(residue_name, {})
    heavy = [i for i, n in enumerate(atom_names) if not _is_hydrogen(n)]
    depth = np.full(len(atom_names), -1, dtype=np.int64)  # -1: backbone / never moves
    for i in heavy:
        depth[i] = depth_table.get(atom_names[i], -1)
    for i, n in enumerate(atom_names):
        if _is_hydrogen(n) and heavy:
            d = np.linalg.norm(coords[heavy] - coords[i], axis=1)
            parent = heavy[int(np.argmin(d))]
            pd = depth[parent]
            # an H on the axis atom of chi_k moves with chi_k
            depth[i] = pd + 1 if pd >= 0 else -1
    bonds = []
    for k, quad in enumerate(CHI_ATOMS.get(residue_name, [])):
        if any(a not in pos for a in quad):
            break
        deps = np.nonzero(depth >= k + 1)[0]
        bonds.append(ChiBond(axis=(pos[quad[1]] + offset, pos[quad[2]] + offset),
                             dependents=(deps + offset).astype(np.int64)))
    return tuple(bonds)


def _is_hydrogen(name):
    stripped = name.lstrip("0123456789")
    return stripped.startswith("H")


# --------------------------------------------------------------------------
# rigid motions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ShapeError("rotation must be 3x3 and translation a 3-vector")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise InvalidParameterError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def apply(self, points):
        """Row-vector convention: x -> x R^T + t."""
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    @classmethod
    def random(cls, rng, translation_scale=10.0):
        q = rng.standard_normal(4)
        q /= np.linalg.norm(q)
        w, x, y, z = q
        rot = np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ])
        return cls(rot, rng.standard_normal(3) * translation_scale)


def transform_protein(p: Protein, g: RigidTransform) -> Protein:
    return p.with_coords(g.apply(p.coords))


# --------------------------------------------------------------------------
# wrapped normal
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class WrappedNormal:
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidParameterError(f"sigma must be positive, got {self.sigma}")

    def sample(self, shape, rng):
        return np.mod(rng.normal(0.0, self.sigma, size=shape), TWO_PI)

    def pdf(self, x, wraps=5):
        x = np.asarray(x, dtype=np.float64)
        k = np.arange(-wraps, wraps + 1)
        z = (x[..., None] + TWO_PI * k) / self.sigma
        return np.exp(-0.5 * z * z).sum(-1) / (self.sigma * np.sqrt(TWO_PI))


def sample_wrapped_normal(sigma, shape, rng):
    """Angles drawn as ``N(0, sigma^2) mod 2*pi``; ``rng`` is a numpy Generator."""
    return WrappedNormal(float(sigma)).sample(shape, rng)


# --------------------------------------------------------------------------
# rotations / torsional perturbation
# --------------------------------------------------------------------------

def rotate_about_axis(coords, axis_origin, axis_dir, angle):
    """Rodrigues rotation of points about the line through ``axis_origin`` along ``axis_dir``."""
    axis_dir = np.asarray(axis_dir, dtype=np.float64)
    norm = np.linalg.norm(axis_dir)
    if norm == 0.0:
        raise InvalidParameterError("rotation axis has zero length")
    if abs(norm - 1.0) > 1e-9:
        raise InvalidParameterError(f"rotation axis must be unit length, got norm {norm}")
    if angle == 0.0:
        return np.array(coords, dtype=np.float64, copy=True)
    k = axis_dir
    v = np.asarray(coords, dtype=np.float64) - axis_origin
    c, s = np.cos(angle), np.sin(angle)
    rotated = v * c + np.cross(k, v) * s + np.outer(v @ k, k) * (1.0 - c)
    return rotated + axis_origin


def perturb_torsional(p: Protein, eps) -> Protein:
    """Rotate every defined chi bond of residue i by ``eps[i, k]``, chi1 first."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != (p.num_residues, 4):
        raise ShapeError(f"eps must have shape ({p.num_residues}, 4), got {eps.shape}")
    if not p.chi_topology:
        raise StructuralError("protein carries no chi topology")
    coords = p.coords.copy()
    for i, bonds in enumerate(p.chi_topology):
        for k, bond in enumerate(bonds):
            angle = eps[i, k]
            if angle == 0.0 or bond.dependents.size == 0:
                continue
            b, c = bond.axis
            axis = coords[c] - coords[b]
            axis /= np.linalg.norm(axis)
            coords[bond.dependents] = rotate_about_axis(coords[bond.dependents], coords[b], axis, angle)
    return p.with_coords(coords)


def dihedral(p0, p1, p2, p3):
    b0 = p0 - p1
    b1 = p2 - p1
    b2 = p3 - p2
    b1n = b1 / np.linalg.norm(b1)
    v = b0 - np.dot(b0, b1n) * b1n
    w = b2 - np.dot(b2, b1n) * b1n
    x = np.dot(v, w)
    y = np.dot(np.cross(b1n, v), w)
    return float(np.arctan2(y, x))


def rmsd(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] < 1:
        raise ShapeError(f"rmsd needs two equal-sized non-empty point sets, got {a.shape} and {b.shape}")
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))))


COVALENT_RADIUS = {"C": 0.76, "N": 0.71, "O": 0.66, "S": 1.05, "H": 0.31, "SE": 1.20}


def bonded_matrix(p: Protein, tolerance=0.45):
    """Pairs treated as covalently linked in ``p``: closer than the sum of covalent radii plus
    ``tolerance``. The diagonal is set too, so callers can mask self pairs with it."""
    r = np.array([COVALENT_RADIUS.get(e.upper(), 0.76) for e in p.elements])
    d = np.linalg.norm(p.coords[:, None, :] - p.coords[None, :, :], axis=-1)
    return d < r[:, None] + r[None, :] + tolerance


def one_hot(codes, width):
    codes = np.asarray(codes, dtype=np.int64)
    out = np.zeros((codes.shape[0], width))
    out[np.arange(codes.shape[0]), codes] = 1.0
    return out


__all__ = [
    "ChiBond", "Protein", "RigidTransform", "WrappedNormal", "sample_wrapped_normal",
    "rotate_about_axis", "perturb_torsional", "rmsd", "dihedral", "transform_protein",
    "build_chi_topology", "bonded_matrix", "one_hot", "MASK", "NUM_RESIDUE_TYPES", "TWO_PI",
]
