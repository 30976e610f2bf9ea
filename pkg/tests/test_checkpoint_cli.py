import json
import os

import numpy as np
import pytest

from siamdiff.checkpoint import (
    Checkpoint,
    config_digest,
    from_bytes,
    load_checkpoint,
    round_to_f32,
    save_checkpoint,
    to_bytes,
)
from siamdiff.cli import LOCK_NAME, main
from siamdiff.config import defaults, parse_config_text
from siamdiff.core import MASK_LETTER
from siamdiff.diffusion import make_schedule
from siamdiff.encoder import Architecture, ModelParams
from siamdiff.errors import ConfigError, IntegrityError
from siamdiff.ingest import GraphConfig, parse_pdb_subset, read_manifest, toy_manifest_path

SMALL = """\
[model]
hidden_dim = 8
num_layers = 1
[pretrain]
mode = {mode}
level = {level}
epochs = {epochs}
batch_size = 5
max_residues_per_protein = 12
learning_rate = 1e-3
"""


def _cfg(tmp_path, mode="diffpret", level="residue", epochs=2, extra=""):
    f = tmp_path / "run.cfg"
    f.write_text(SMALL.format(mode=mode, level=level, epochs=epochs) + extra)
    return str(f)


def _params(seed=0):
    return ModelParams.init(Architecture.from_graph_config(GraphConfig(level="residue"), 8, 1), seed=seed)


# --------------------------------------------------------------------------
# checkpoint format
# --------------------------------------------------------------------------

def test_roundtrip_is_byte_stable(tmp_path):
    ck = Checkpoint(_params(), config_digest({"a": 1}), {"epoch": 3})
    blob = to_bytes(ck)
    assert blob[:4] == b"SDCK"
    back = from_bytes(blob)
    assert back.config_digest == ck.config_digest and back.meta == {"epoch": 3}
    assert to_bytes(back) == blob
    f = save_checkpoint(tmp_path / "a.sdck", back)
    assert load_checkpoint(f).params.arch == ck.params.arch
    assert (tmp_path / "a.sdck").read_bytes() == blob


def test_payload_is_float32_rounding():
    prm = _params()
    back = from_bytes(to_bytes(Checkpoint(prm)))
    r = round_to_f32(prm)
    assert all(np.array_equal(back.params[k], r[k]) for k in prm.names)
    assert max(np.abs(back.params[k] - prm[k]).max() for k in prm.names) < 1e-6


def test_header_directory_is_contiguous():
    blob = to_bytes(Checkpoint(_params()))
    hlen = int.from_bytes(blob[8:12], "little")
    header = json.loads(blob[12:12 + hlen])
    off = 0
    for e in header["tensors"]:
        assert e["offset"] == off
        off += 4 * e["count"]
    assert off == header["payload_bytes"] == len(blob) - 12 - hlen


@pytest.mark.parametrize("where", ["magic", "payload", "header", "truncate"])
def test_corruption_detected(where):
    blob = bytearray(to_bytes(Checkpoint(_params())))
    if where == "magic":
        blob[0] = ord("X")
    elif where == "payload":
        blob[-5] ^= 0x01
    elif where == "header":
        blob[20] = ord("{")
    else:
        blob = blob[:-4]
    with pytest.raises(IntegrityError):
        from_bytes(bytes(blob))


def test_architecture_mismatch_fails_on_load():
    blob = to_bytes(Checkpoint(_params()))
    other = Architecture.from_graph_config(GraphConfig(level="residue"), 16, 1)
    with pytest.raises(ConfigError):
        from_bytes(blob, expect_arch=other)


# --------------------------------------------------------------------------
# config files
# --------------------------------------------------------------------------

def test_config_parsing(tmp_path):
    cfg = parse_config_text("[pretrain]\ntorsion_sigma = 0.1pi\nbatch_size = auto\n[data]\nmanifest = m.txt\n",
                            base_dir=str(tmp_path))
    assert cfg["pretrain"]["torsion_sigma"] == pytest.approx(0.1 * np.pi)
    assert cfg["pretrain"]["batch_size"] is None
    assert cfg["data"]["manifest"] == str(tmp_path / "m.txt")
    assert defaults()["schedule"]["T"] == 100
    for bad in ("[pretrain]\nbogus = 1\n", "[nowhere]\nx = 1\n", "[pretrain]\nepochs = many\n", "no section\n"):
        with pytest.raises(ConfigError):
            parse_config_text(bad)


# --------------------------------------------------------------------------
# pretrain command
# --------------------------------------------------------------------------

def test_pretrain_writes_artifacts(tmp_path):
    out = tmp_path / "out"
    assert main(["pretrain", "--config", _cfg(tmp_path), "--out", str(out)]) == 0
    names = set(os.listdir(out))
    assert {"train_log.jsonl", "config.json", "epoch_0001.sdck", "epoch_0002.sdck", "model.sdck",
            "epoch_summary.jsonl"} <= names
    assert LOCK_NAME not in names
    lines = (out / "train_log.jsonl").read_text().splitlines()
    assert len(lines) == 2 * 5
    ck = load_checkpoint(out / "model.sdck")
    assert ck.meta["epoch"] == 2 and len(ck.config_digest) == 64
    assert (out / "epoch_0002.sdck").read_bytes()[12:] != b""


def test_pretrain_atom_siamdiff_smoke(tmp_path):
    out = tmp_path / "out"
    assert main(["pretrain", "--config", _cfg(tmp_path, mode="siamdiff", level="atom", epochs=1),
                 "--out", str(out)]) == 0
    assert load_checkpoint(out / "model.sdck").params.arch.level == "atom"


def test_zero_epochs_writes_init_checkpoint(tmp_path):
    out = tmp_path / "out"
    assert main(["pretrain", "--config", _cfg(tmp_path, epochs=0), "--out", str(out), "--seed", "4"]) == 0
    ck = load_checkpoint(out / "model.sdck")
    init = round_to_f32(ModelParams.init(ck.params.arch, seed=4))
    assert all(np.array_equal(ck.params[k], init[k]) for k in init.names)
    assert (out / "train_log.jsonl").read_text() == ""


def test_paper_scale_flag(tmp_path):
    out = tmp_path / "out"
    assert main(["pretrain", "--config", _cfg(tmp_path, epochs=0), "--paper-scale", "--out", str(out)]) == 0
    arch = load_checkpoint(out / "model.sdck").params.arch
    assert (arch.num_layers, arch.hidden_dim) == (6, 512)


def test_pretrain_exit_codes(tmp_path, capsys):
    out = str(tmp_path / "out")
    assert main(["pretrain", "--config", _cfg(tmp_path, extra="[model]\n") , "--out", out]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("[pretrain]\nlearnig_rate = 1\n")
    assert main(["pretrain", "--config", str(bad), "--out", out]) == 2
    assert "learnig_rate" in capsys.readouterr().err
    assert main(["pretrain", "--config", _cfg(tmp_path), "--manifest", str(tmp_path / "nope.txt"), "--out", out]) == 3
    man = tmp_path / "m.txt"
    man.write_text(str(tmp_path / "missing.pdb") + "\n")
    assert main(["pretrain", "--config", _cfg(tmp_path), "--manifest", str(man), "--out", out]) == 3
    garbage = tmp_path / "g.pdb"
    garbage.write_text("ATOM      1  CA  ALA A   1      xx.xxx   0.000   0.000  1.00  0.00           C\n")
    man.write_text(str(garbage) + "\n")
    assert main(["pretrain", "--config", _cfg(tmp_path), "--manifest", str(man), "--out", out]) == 3
    assert main(["pretrain", "--config", _cfg(tmp_path), "--lr", "-1", "--out", out]) == 2


def test_divergence_exit_code(tmp_path, monkeypatch):
    from siamdiff import pretrain as pt

    real = pt.compute_loss

    def poisoned(*a, **k):
        rep = real(*a, **k)
        rep.loss_total = float("inf")
        return rep

    monkeypatch.setattr(pt, "compute_loss", poisoned)
    out = tmp_path / "out"
    assert main(["pretrain", "--config", _cfg(tmp_path), "--out", str(out)]) == 4
    assert any(n.startswith("divergence_") for n in os.listdir(out))


def test_lock_blocks_concurrent_writer(tmp_path):
    out = tmp_path / "out"
    out.mkdir()
    (out / LOCK_NAME).write_text("123")
    assert main(["pretrain", "--config", _cfg(tmp_path), "--out", str(out)]) == 2
    assert not (out / "model.sdck").exists()


def test_pretrain_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cfg = _cfg(tmp_path, mode="siamdiff")
    assert main(["pretrain", "--config", cfg, "--out", str(a)]) == 0
    assert main(["pretrain", "--config", cfg, "--out", str(b)]) == 0
    for name in ("model.sdck", "epoch_0001.sdck", "train_log.jsonl", "epoch_summary.jsonl", "config.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


# --------------------------------------------------------------------------
# diffuse command
# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def toy_file():
    return read_manifest(toy_manifest_path())[0]


def test_diffuse_replay_and_endpoints(tmp_path, toy_file):
    out = tmp_path / "d"
    assert main(["diffuse", "--input", toy_file, "--t", "0,50,100", "--seed", "3", "--out", str(out)]) == 0
    p = parse_pdb_subset(toy_file, strip_hydrogens=True)
    sched = make_schedule()
    c0 = np.load(out / "t000_coords.npy")
    assert np.array_equal(c0, p.coords)
    assert not np.load(out / "t000_eps.npy").any()
    again = parse_pdb_subset(str(out / "t000.pdb"))
    assert np.abs(again.coords - p.coords).max() <= 5e-4
    assert again.sequence_string() == p.sequence_string()

    eps = np.load(out / "t050_eps.npy")
    ab = sched.alpha_bar_at(50)
    assert np.abs(np.load(out / "t050_coords.npy") - (np.sqrt(ab) * p.coords + np.sqrt(1 - ab) * eps)).max() < 1e-6
    mask = np.load(out / "t050_mask.npy")
    seq50 = (out / "t050.seq").read_text().strip()
    masked = set(mask.tolist())
    assert masked
    for i, ch in enumerate(seq50):
        assert (ch == MASK_LETTER) == (i in masked)
        assert ch == MASK_LETTER or ch == p.sequence_string()[i]

    seq100 = (out / "t100.seq").read_text().strip()
    assert len(np.load(out / "t100_mask.npy")) == p.num_residues
    assert seq100 == MASK_LETTER * p.num_residues
    traj = json.loads((out / "trajectory.json").read_text())
    assert [s["t"] for s in traj["steps"]] == [0, 50, 100]
    assert traj["steps"][-1]["mask_rate"] == 1.0


def test_diffuse_is_deterministic(tmp_path, toy_file):
    for d in ("x", "y"):
        assert main(["diffuse", "--input", toy_file, "--t", "10", "--level", "residue", "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "x" / "t010_coords.npy").read_bytes() == (tmp_path / "y" / "t010_coords.npy").read_bytes()


def test_diffuse_errors(tmp_path, toy_file):
    assert main(["diffuse", "--input", str(tmp_path / "none.pdb"), "--out", str(tmp_path / "o")]) == 3
    assert main(["diffuse", "--input", toy_file, "--t", "101", "--out", str(tmp_path / "o")]) == 2
    assert main(["diffuse", "--out", str(tmp_path / "o")]) == 2


# --------------------------------------------------------------------------
# eval and selfcheck commands
# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("trained")
    cfg = _cfg(d, epochs=1)
    assert main(["pretrain", "--config", cfg, "--out", str(d / "run")]) == 0
    return d / "run" / "model.sdck"


def test_eval_probe_and_fixtures(tmp_path, trained, capsys):
    fx = tmp_path / "fmax.json"
    fx.write_text(json.dumps({"scores": [[1, 0, 0], [0, 1, 1]], "truth": [[0], [1, 2]]}))
    rk = tmp_path / "rank.json"
    rk.write_text(json.dumps({"triples": [["a", 1, 5], ["a", 2, 4], ["a", 3, 3], ["b", 4, 2], ["b", 5, 1]]}))
    out = tmp_path / "e"
    assert main(["eval", "--checkpoint", str(trained), "--t", "1,42,100", "--fmax-fixture", str(fx),
                 "--ranking-fixture", str(rk), "--out", str(out)]) == 0
    rows = (out / "probe.csv").read_text().splitlines()
    assert len(rows) == 4 and [r.split(",")[0] for r in rows[1:]] == ["1", "42", "100"]
    metrics = dict(line.split(",") for line in (out / "metrics.csv").read_text().splitlines()[1:])
    assert float(metrics["fmax"]) == 1.0
    assert float(metrics["spearman_global"]) == -1.0 and float(metrics["spearman_mean"]) == -1.0
    assert "fmax = 1.0000" in capsys.readouterr().out


def test_eval_errors(tmp_path, trained):
    assert main(["eval", "--checkpoint", str(tmp_path / "none.sdck"), "--out", str(tmp_path / "e")]) == 3
    bad = tmp_path / "bad.sdck"
    blob = bytearray(trained.read_bytes())
    blob[-1] ^= 0xFF
    bad.write_bytes(bytes(blob))
    assert main(["eval", "--checkpoint", str(bad), "--out", str(tmp_path / "e")]) == 5
    cfg = tmp_path / "g.cfg"
    cfg.write_text("[graph]\nseq_dist_threshold = 2\n")
    assert main(["eval", "--config", str(cfg), "--checkpoint", str(trained), "--out", str(tmp_path / "e")]) == 2
    fx = tmp_path / "const.json"
    fx.write_text(json.dumps({"triples": [["a", 1, 1], ["a", 2, 1]]}))
    assert main(["eval", "--checkpoint", str(trained), "--t", "5", "--ranking-fixture", str(fx),
                 "--out", str(tmp_path / "e")]) == 3


def test_selfcheck_flags_corrupt_checkpoint(tmp_path, trained):
    bad = tmp_path / "bad.sdck"
    blob = bytearray(trained.read_bytes())
    blob[-2] ^= 0x10
    bad.write_bytes(bytes(blob))
    assert main(["selfcheck", "--quick", "--checkpoint", str(bad)]) == 5


def test_selfcheck_quick_passes(capsys):
    assert main(["selfcheck", "--quick"]) == 0
    out = capsys.readouterr().out
    assert "selfcheck passed" in out and "FAIL" not in out
