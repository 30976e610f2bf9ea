"""Generate the bundled 5-protein toy set from ideal internal coordinates.

Backbones follow sampled (phi, psi) from helix / strand basins; side chains
are placed with common rotamer values and greedily re-drawn when they come
closer than 2.6 A (2.2 A for
sequence neighbours) to already-placed atoms. Output is deterministic.

    python tools/make_toy_set.py src/siamdiff/data/toy
"""
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))
from siamdiff.core import Protein  # noqa: E402
from siamdiff.ingest import parse_pdb_subset  # noqa: E402
from siamdiff.residues import RESIDUE_NAMES  # noqa: E402

# (atom, ref_a, ref_b, ref_c, bond, angle_deg, torsion) ; torsion is degrees or ("chiK", offset)
SIDECHAINS = {
    "ALA": [],
    "GLY": [],
    "SER": [("OG", "N", "CA", "CB", 1.42, 111.0, ("chi1", 0))],
    "CYS": [("SG", "N", "CA", "CB", 1.81, 114.0, ("chi1", 0))],
    "VAL": [("CG1", "N", "CA", "CB", 1.53, 110.5, ("chi1", 0)),
            ("CG2", "N", "CA", "CB", 1.53, 110.5, ("chi1", 120))],
    "THR": [("OG1", "N", "CA", "CB", 1.43, 109.5, ("chi1", 0)),
            ("CG2", "N", "CA", "CB", 1.53, 111.0, ("chi1", -120))],
    "LEU": [("CG", "N", "CA", "CB", 1.53, 116.0, ("chi1", 0)),
            ("CD1", "CA", "CB", "CG", 1.52, 110.5, ("chi2", 0)),
            ("CD2", "CA", "CB", "CG", 1.52, 110.5, ("chi2", 120))],
    "ILE": [("CG1", "N", "CA", "CB", 1.53, 110.4, ("chi1", 0)),
            ("CG2", "N", "CA", "CB", 1.53, 110.5, ("chi1", -120)),
            ("CD1", "CA", "CB", "CG1", 1.52, 113.8, ("chi2", 0))],
    "MET": [("CG", "N", "CA", "CB", 1.52, 114.0, ("chi1", 0)),
            ("SD", "CA", "CB", "CG", 1.81, 112.7, ("chi2", 0)),
            ("CE", "CB", "CG", "SD", 1.79, 100.6, ("chi3", 0))],
    "ASP": [("CG", "N", "CA", "CB", 1.52, 113.0, ("chi1", 0)),
            ("OD1", "CA", "CB", "CG", 1.25, 119.0, ("chi2", 0)),
            ("OD2", "CA", "CB", "CG", 1.25, 119.0, ("chi2", 180))],
    "ASN": [("CG", "N", "CA", "CB", 1.52, 113.0, ("chi1", 0)),
            ("OD1", "CA", "CB", "CG", 1.23, 121.0, ("chi2", 0)),
            ("ND2", "CA", "CB", "CG", 1.33, 116.4, ("chi2", 180))],
    "GLU": [("CG", "N", "CA", "CB", 1.52, 114.0, ("chi1", 0)),
            ("CD", "CA", "CB", "CG", 1.52, 113.0, ("chi2", 0)),
            ("OE1", "CB", "CG", "CD", 1.25, 119.0, ("chi3", 0)),
            ("OE2", "CB", "CG", "CD", 1.25, 119.0, ("chi3", 180))],
    "GLN": [("CG", "N", "CA", "CB", 1.52, 114.0, ("chi1", 0)),
            ("CD", "CA", "CB", "CG", 1.52, 113.0, ("chi2", 0)),
            ("OE1", "CB", "CG", "CD", 1.23, 121.0, ("chi3", 0)),
            ("NE2", "CB", "CG", "CD", 1.33, 116.4, ("chi3", 180))],
    "LYS": [("CG", "N", "CA", "CB", 1.52, 114.0, ("chi1", 0)),
            ("CD", "CA", "CB", "CG", 1.52, 111.5, ("chi2", 0)),
            ("CE", "CB", "CG", "CD", 1.52, 111.5, ("chi3", 0)),
            ("NZ", "CG", "CD", "CE", 1.49, 111.7, ("chi4", 0))],
    "ARG": [("CG", "N", "CA", "CB", 1.52, 114.0, ("chi1", 0)),
            ("CD", "CA", "CB", "CG", 1.52, 111.5, ("chi2", 0)),
            ("NE", "CB", "CG", "CD", 1.46, 112.0, ("chi3", 0)),
            ("CZ", "CG", "CD", "NE", 1.33, 124.5, ("chi4", 0)),
            ("NH1", "CD", "NE", "CZ", 1.33, 120.0, 0.0),
            ("NH2", "CD", "NE", "CZ", 1.33, 120.0, 180.0)],
    "PHE": [("CG", "N", "CA", "CB", 1.50, 113.8, ("chi1", 0)),
            ("CD1", "CA", "CB", "CG", 1.39, 120.7, ("chi2", 0)),
            ("CD2", "CA", "CB", "CG", 1.39, 120.7, ("chi2", 180)),
            ("CE1", "CB", "CG", "CD1", 1.39, 120.0, 180.0),
            ("CE2", "CB", "CG", "CD2", 1.39, 120.0, 180.0),
            ("CZ", "CG", "CD1", "CE1", 1.39, 120.0, 0.0)],
    "TYR": [("CG", "N", "CA", "CB", 1.51, 113.8, ("chi1", 0)),
            ("CD1", "CA", "CB", "CG", 1.39, 120.8, ("chi2", 0)),
            ("CD2", "CA", "CB", "CG", 1.39, 120.8, ("chi2", 180)),
            ("CE1", "CB", "CG", "CD1", 1.39, 121.2, 180.0),
            ("CE2", "CB", "CG", "CD2", 1.39, 121.2, 180.0),
            ("CZ", "CG", "CD1", "CE1", 1.39, 119.6, 0.0),
            ("OH", "CD1", "CE1", "CZ", 1.36, 119.9, 180.0)],
    "TRP": [("CG", "N", "CA", "CB", 1.50, 114.0, ("chi1", 0)),
            ("CD1", "CA", "CB", "CG", 1.37, 127.0, ("chi2", 0)),
            ("CD2", "CA", "CB", "CG", 1.43, 126.6, ("chi2", 180)),
            ("NE1", "CB", "CG", "CD1", 1.38, 108.5, 180.0),
            ("CE2", "CB", "CG", "CD2", 1.40, 107.2, 180.0),
            ("CE3", "CB", "CG", "CD2", 1.40, 133.9, 0.0),
            ("CZ2", "CG", "CD2", "CE2", 1.40, 122.4, 180.0),
            ("CZ3", "CG", "CD2", "CE3", 1.39, 118.7, 180.0),
            ("CH2", "CD2", "CE2", "CZ2", 1.37, 117.5, 0.0)],
    "HIS": [("CG", "N", "CA", "CB", 1.50, 113.7, ("chi1", 0)),
            ("ND1", "CA", "CB", "CG", 1.38, 122.7, ("chi2", 0)),
            ("CD2", "CA", "CB", "CG", 1.36, 131.0, ("chi2", 180)),
            ("CE1", "CB", "CG", "ND1", 1.32, 109.0, 180.0),
            ("NE2", "CB", "CG", "CD2", 1.37, 107.0, 180.0)],
    "PRO": [("CG", "N", "CA", "CB", 1.50, 104.5, 15.0),
            ("CD", "CA", "CB", "CG", 1.51, 105.5, -20.0)],
}

ROTAMERS = {"chi1": (-65.0, 180.0, 60.0), "chi2": (180.0, 65.0, -65.0, 90.0),
            "chi3": (180.0, 65.0, -65.0), "chi4": (180.0, 65.0, -65.0)}


def place(a, b, c, bond, angle, torsion):
    """NeRF: position d with |cd| = bond, angle(b, c, d) and dihedral(a, b, c, d)."""
    angle, torsion = np.radians(angle), np.radians(torsion)
    bc = c - b
    bc /= np.linalg.norm(bc)
    n = np.cross(b - a, bc)
    n /= np.linalg.norm(n)
    m = np.cross(n, bc)
    d2 = np.array([-bond * np.cos(angle), bond * np.sin(angle) * np.cos(torsion), bond * np.sin(angle) * np.sin(torsion)])
    return c + d2[0] * bc + d2[1] * m + d2[2] * n


def build_backbone(phis, psis):
    n_res = len(phis)
    N = np.array([0.0, 1.458, 0.0])
    CA = np.array([0.0, 0.0, 0.0])
    C = place(np.array([1.0, 2.0, 0.0]), N, CA, 1.525, 111.2, -60.0)
    bb = [(N, CA, C)]
    for i in range(1, n_res):
        pN, pCA, pC = bb[-1]
        N = place(pN, pCA, pC, 1.329, 116.2, psis[i - 1])
        CA = place(pCA, pC, N, 1.458, 121.7, 180.0)
        C = place(pC, N, CA, 1.525, 111.2, phis[i])
        bb.append((N, CA, C))
    out = []
    for i, (N, CA, C) in enumerate(bb):
        O = place(N, CA, C, 1.231, 120.5, psis[i] + 180.0)
        out.append({"N": N, "CA": CA, "C": C, "O": O})
    return out


def build_protein(sequence, phis, psis, rng):
    residues = build_backbone(phis, psis)
    placed = [(i, v) for i, r in enumerate(residues) for v in r.values()]
    for i, (name, atoms) in enumerate(zip(sequence, residues)):
        if name == "GLY":
            continue
        atoms["CB"] = place(atoms["C"], atoms["N"], atoms["CA"], 1.53, 110.0, -122.6)
        others = np.array([v for j, v in placed if j != i])
        limit = np.array([2.2 if abs(j - i) == 1 else 2.6 for j, _ in placed if j != i])
        for _attempt in range(200):
            chis = {k: rng.choice(v) + rng.normal(0, 8.0) for k, v in ROTAMERS.items()}
            trial = {}
            for atom, ra, rb, rc, bond, ang, tor in SIDECHAINS[name]:
                lookup = {**atoms, **trial}
                t = chis[tor[0]] + tor[1] if isinstance(tor, tuple) else tor
                trial[atom] = place(lookup[ra], lookup[rb], lookup[rc], bond, ang, t)
            pts = np.array([atoms["CB"]] + list(trial.values()))
            if np.all(np.linalg.norm(others[:, None] - pts[None], axis=-1) >= limit[:, None]):
                break
        else:
            raise RuntimeError(f"could not place side chain of residue {i} {name}")
        atoms.update(trial)
        placed.extend((i, v) for k, v in atoms.items() if k not in ("N", "CA", "C", "O"))
    text = []
    serial = 1
    for i, (name, atoms) in enumerate(zip(sequence, residues)):
        for atom, xyz in atoms.items():
            padded = f" {atom:<3s}"
            text.append(f"ATOM  {serial:5d} {padded} {name:>3s} A{i + 1:4d}    "
                        f"{xyz[0]:8.3f}{xyz[1]:8.3f}{xyz[2]:8.3f}  1.00  0.00           {atom[0]}")
            serial += 1
    text.append("END")
    return "\n".join(text) + "\n"


SPECS = [
    # (length, secondary-structure string: H helix, E strand, L loop)
    (16, "HHHHHHHHHHHHHHHH"),
    (14, "EEEEEELLEEEEEE"),
    (20, "HHHHHHHLLLLHHHHHHHHH"),
    (18, "LEEEEELLLHHHHHHHHL"),
    (12, "LLHHHHHHHHLL"),
]
BASINS = {"H": (-60.0, -45.0), "E": (-125.0, 130.0), "L": (-80.0, 150.0)}


def main(outdir):
    rng = np.random.default_rng(20240515)
    os.makedirs(outdir, exist_ok=True)
    names = []
    for k, (length, ss) in enumerate(SPECS):
        for _attempt in range(100):
            seq = [RESIDUE_NAMES[i] for i in rng.integers(0, 20, size=length)]
            phis = [BASINS[s][0] + rng.normal(0, 8.0) for s in ss]
            psis = [BASINS[s][1] + rng.normal(0, 8.0) for s in ss]
            try:
                text = build_protein(seq, phis, psis, rng)
                break
            except RuntimeError:
                continue
        fname = f"toy{k + 1}.pdb"
        with open(os.path.join(outdir, fname), "w") as fh:
            fh.write(text)
        p = parse_pdb_subset(os.path.join(outdir, fname))
        assert isinstance(p, Protein)
        names.append(fname)
        print(fname, p.num_residues, "residues", p.num_atoms, "atoms", p.sequence_string())
    with open(os.path.join(outdir, "manifest.txt"), "w") as fh:
        fh.write("\n".join(names) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else os.path.join("src", "siamdiff", "data", "toy"))
