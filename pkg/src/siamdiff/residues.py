"""Residue alphabet and side-chain torsion definitions for the 20 standard amino acids."""

RESIDUE_NAMES = (
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE",
    "LEU", "LYS", "MET", "PHE", "PRO", "SER", "THR", "TRP", "TYR", "VAL",
)
ONE_LETTER = "ARNDCQEGHILKMFPSTWYV"
NUM_RESIDUE_TYPES = 20
MASK = 20  # sentinel code for an absorbed (masked) residue
MASK_LETTER = "#"

RESIDUE_INDEX = {name: i for i, name in enumerate(RESIDUE_NAMES)}
BACKBONE_ATOMS = ("N", "CA", "C", "O", "OXT")

ELEMENTS = ("C", "N", "O", "S", "H")
NUM_ELEMENT_TYPES = len(ELEMENTS) + 1  # last slot is "other"

# Four atoms defining each chi dihedral. Rotation is about the bond between the
# 2nd and 3rd atoms and moves everything beyond the 3rd atom.
# PRO is left without rotatable bonds: its chi1/chi2 close a ring back onto N,
# so rotating them would stretch the CD-N bond.
CHI_ATOMS = {
    "ALA": [],
    "ARG": [("N", "CA", "CB", "CG"), ("CA", "CB", "CG", "CD"),
            ("CB", "CG", "CD", "NE"), ("CG", "CD", "NE", "CZ")],
    "ASN": [("N", "CA", "CB", "CG"), ("CA", "CB", "CG", "OD1")],
    "ASP": [("N", "CA", "CB", "CG"), ("CA", "CB", "CG", "OD1")],
    "CYS": [("N", "CA", "CB", "SG")],
    "GLN": [("N", "CA", "CB", "CG"), ("CA", "CB", "CG", "CD"), ("CB", "CG", "CD", "OE1")],
    "GLU": [("N", "CA", "CB", "CG"), ("CA", "CB", "CG", "CD"), ("CB", "CG", "CD", "OE1")],
    "GLY": [],
    "HIS": [("N", "CA", "CB", "CG"), ("CA", "CB", "CG", "ND1")],
    "ILE": [("N", "CA", "CB", "CG1"), ("CA", "CB", "CG1", "CD1")],
    "LEU": [("N", "CA", "CB", "CG"), ("CA", "CB", "CG", "CD1")],
    "LYS": [("N", "CA", "CB", "CG"), ("CA", "CB", "CG", "CD"),
            ("CB", "CG", "CD", "CE"), ("CG", "CD", "CE", "NZ")],
    "MET": [("N", "CA", "CB", "CG"), ("CA", "CB", "CG", "SD"), ("CB", "CG", "SD", "CE")],
    "PHE": [("N", "CA", "CB", "CG"), ("CA", "CB", "CG", "CD1")],
    "PRO": [],
    "SER": [("N", "CA", "CB", "OG")],
    "THR": [("N", "CA", "CB", "OG1")],
    "TRP": [("N", "CA", "CB", "CG"), ("CA", "CB", "CG", "CD1")],
    "TYR": [("N", "CA", "CB", "CG"), ("CA", "CB", "CG", "CD1")],
    "VAL": [("N", "CA", "CB", "CG1")],
}

# Heavy side-chain atoms and the chi depth at which each becomes mobile:
# an atom with depth k moves under chi_1 .. chi_k.
SIDECHAIN_DEPTH = {
    "ALA": {"CB": 0},
    "ARG": {"CB": 0, "CG": 1, "CD": 2, "NE": 3, "CZ": 4, "NH1": 4, "NH2": 4},
    "ASN": {"CB": 0, "CG": 1, "OD1": 2, "ND2": 2},
    "ASP": {"CB": 0, "CG": 1, "OD1": 2, "OD2": 2},
    "CYS": {"CB": 0, "SG": 1},
    "GLN": {"CB": 0, "CG": 1, "CD": 2, "OE1": 3, "NE2": 3},
    "GLU": {"CB": 0, "CG": 1, "CD": 2, "OE1": 3, "OE2": 3},
    "GLY": {},
    "HIS": {"CB": 0, "CG": 1, "ND1": 2, "CD2": 2, "CE1": 2, "NE2": 2},
    "ILE": {"CB": 0, "CG1": 1, "CG2": 1, "CD1": 2},
    "LEU": {"CB": 0, "CG": 1, "CD1": 2, "CD2": 2},
    "LYS": {"CB": 0, "CG": 1, "CD": 2, "CE": 3, "NZ": 4},
    "MET": {"CB": 0, "CG": 1, "SD": 2, "CE": 3},
    "PHE": {"CB": 0, "CG": 1, "CD1": 2, "CD2": 2, "CE1": 2, "CE2": 2, "CZ": 2},
    "PRO": {"CB": 0, "CG": 0, "CD": 0},
    "SER": {"CB": 0, "OG": 1},
    "THR": {"CB": 0, "OG1": 1, "CG2": 1},
    "TRP": {"CB": 0, "CG": 1, "CD1": 2, "CD2": 2, "NE1": 2, "CE2": 2,
            "CE3": 2, "CZ2": 2, "CZ3": 2, "CH2": 2},
    "TYR": {"CB": 0, "CG": 1, "CD1": 2, "CD2": 2, "CE1": 2, "CE2": 2, "CZ": 2, "OH": 2},
    "VAL": {"CB": 0, "CG1": 1, "CG2": 1},
}


def element_of(atom_name, element_field=""):
    """Element symbol from the PDB element column, falling back to the atom name."""
    el = element_field.strip().upper()
    if el:
        return el
    name = atom_name.strip().lstrip("0123456789")
    return name[:1].upper() if name else "X"


def element_index(element):
    try:
        return ELEMENTS.index(element)
    except ValueError:
        return len(ELEMENTS)
