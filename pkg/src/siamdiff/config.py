"""Run configuration files: ``key = value`` lines grouped in ``[section]`` blocks.

Unknown sections or keys are rejected. Values are typed by the schema below;
missing keys take the listed defaults.
"""
from __future__ import annotations

import configparser
import math
import os

from .errors import ConfigError

_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _bool(s):
    try:
        return _BOOL[s.strip().lower()]
    except KeyError:
        raise ValueError(f"not a boolean: {s!r}") from None


def _opt_int(s):
    s = s.strip()
    return None if s.lower() in ("", "none", "auto") else int(s)


def _int_list(s):
    return [int(x) for x in s.replace(",", " ").split()]


def _float_expr(s):
    """Float, also accepting a multiple of pi such as ``0.1pi``."""
    s = s.strip().lower()
    if s.endswith("pi"):
        head = s[:-2].strip().rstrip("*")
        return (float(head) if head else 1.0) * math.pi
    return float(s)


SCHEMA = {
    "data": {
        "manifest": (str, ""),
        "strip_hydrogens": (_bool, True),
    },
    "graph": {
        "atom_radius": (float, 4.5),
        "seq_dist_threshold": (int, 3),
        "residue_radius": (float, 10.0),
        "knn_k": (int, 10),
        "long_range_cutoff": (int, 5),
        "angle_bins": (int, 8),
        "line_graph": (_bool, True),
    },
    "model": {
        "hidden_dim": (int, 64),
        "num_layers": (int, 3),
        "paper_scale": (_bool, False),
        "init_seed": (_opt_int, None),
    },
    "schedule": {
        "T": (int, 100),
        "beta_min": (float, 1e-4),
        "beta_max": (float, 0.1),
        "mask_min": (float, 0.15),
        "mask_max": (float, 1.0),
    },
    "pretrain": {
        "mode": (str, "siamdiff"),
        "level": (str, "residue"),
        "epochs": (int, 1),
        "learning_rate": (float, 1e-4),
        "optimizer": (str, "adam"),
        "batch_size": (_opt_int, None),
        "max_residues_per_protein": (_opt_int, None),
        "seed": (int, 0),
        "stage_boundary": (int, 10),
        "stage1_fraction": (float, 0.8),
        "torsion_sigma": (_float_expr, 0.1 * math.pi),
        "residue_gauss_sigma": (float, 0.3),
        "clash_min_dist": (float, 1.2),
        "clash_max_retries": (int, 20),
        "seq_loss_reduction": (str, "mean"),
        "struct_loss_reduction": (str, "mean"),
        "tied_noise": (_bool, False),
        "noise_structure": (_bool, True),
        "checkpoint_every": (int, 1),
    },
    "diffuse": {
        "input": (str, ""),
        "t_list": (_int_list, [0, 1, 10, 50, 100]),
        "seed": (int, 0),
        "level": (str, "atom"),
    },
    "eval": {
        "checkpoint": (str, ""),
        "t_list": (_int_list, [1, 10, 25, 50, 75, 100]),
        "repeats": (int, 1),
        "seed": (int, 0),
        "sequence_only": (_bool, False),
        "fmax_fixture": (str, ""),
        "ranking_fixture": (str, ""),
    },
    "output": {
        "dir": (str, "siamdiff_out"),
    },
}

PATH_KEYS = {("data", "manifest"), ("diffuse", "input"), ("eval", "checkpoint"),
             ("eval", "fmax_fixture"), ("eval", "ranking_fixture"), ("output", "dir")}


def defaults() -> dict:
    return {sec: {k: (list(v[1]) if isinstance(v[1], list) else v[1]) for k, v in keys.items()}
            for sec, keys in SCHEMA.items()}


def parse_config_text(text: str, base_dir=".") -> dict:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",), strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from None
    out = defaults()
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key, raw in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            conv = SCHEMA[sec][key][0]
            try:
                val = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {key}: {exc}") from None
            if (sec, key) in PATH_KEYS and val and not os.path.isabs(val):
                val = os.path.normpath(os.path.join(base_dir, val))
            out[sec][key] = val
    return out


def load_config(path) -> dict:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        text = fh.read()
    return parse_config_text(text, base_dir=os.path.dirname(os.path.abspath(path)))
