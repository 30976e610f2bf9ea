"""Command-line entry points: pretrain, diffuse, eval, selfcheck.

Exit codes: 0 ok, 1 selfcheck failure, 2 configuration/usage error,
3 data error (missing or malformed inputs, missing checkpoint),
4 numerical divergence, 5 integrity error (corrupted checkpoint).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager

import numpy as np

from . import __version__
from .checkpoint import Checkpoint, config_digest, load_checkpoint, save_checkpoint
from .config import defaults, load_config
from .core import MASK_LETTER
from .diffusion import make_schedule, noise_protein
from .encoder import Architecture, ModelParams
from .errors import (
    ClashError,
    ConfigError,
    DivergenceError,
    EmptyInputError,
    GeometryError,
    IntegrityError,
    InvalidParameterError,
    ParseError,
    ShapeError,
    StructuralError,
    UndefinedCorrelationError,
    UsageError,
)
from .evaluate import PredictionSet, RankingSet, denoising_probe, fmax, probe_csv, spearman_global, spearman_mean
from .ingest import GraphConfig, format_pdb_subset, parse_pdb_subset, read_manifest, toy_manifest_path
from .pretrain import PretrainConfig, rng_streams, run_pretraining

log = logging.getLogger("siamdiff")

LOCK_NAME = ".siamdiff.lock"
TRAINING_SECTIONS = ("data", "graph", "model", "schedule", "pretrain")


def exit_code_for(exc) -> int:
    if isinstance(exc, IntegrityError):
        return 5
    if isinstance(exc, DivergenceError):
        return 4
    if isinstance(exc, (ConfigError, UsageError, InvalidParameterError, ShapeError)):
        return 2
    if isinstance(exc, (ParseError, StructuralError, EmptyInputError, ClashError, GeometryError,
                        UndefinedCorrelationError, FileNotFoundError)):
        return 3
    return 1


@contextmanager
def output_lock(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, LOCK_NAME)
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"output directory {out_dir} is locked by another run ({path})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        try:
            os.remove(path)
        except FileNotFoundError:
            pass


# --------------------------------------------------------------------------
# config -> objects
# --------------------------------------------------------------------------

def _load(args) -> dict:
    return load_config(args.config) if args.config else defaults()


def build_objects(cfg: dict):
    g, m, s, p = cfg["graph"], cfg["model"], cfg["schedule"], cfg["pretrain"]
    try:
        gcfg = GraphConfig(level=p["level"], **g)
        sched = make_schedule(**s)
        fields = {k: v for k, v in p.items() if k != "checkpoint_every"}
        pcfg = PretrainConfig(T=s["T"], graph=gcfg, hidden_dim=m["hidden_dim"], num_layers=m["num_layers"],
                              line_graph=g["line_graph"], **fields)
    except (InvalidParameterError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    if m["paper_scale"]:
        arch = Architecture.paper_scale(gcfg)
    else:
        arch = Architecture.from_graph_config(gcfg, hidden_dim=m["hidden_dim"], num_layers=m["num_layers"])
    return gcfg, sched, pcfg, arch


def load_dataset(cfg: dict):
    manifest = cfg["data"]["manifest"] or toy_manifest_path()
    if not os.path.isfile(manifest):
        raise FileNotFoundError(f"manifest not found: {manifest}")
    paths = read_manifest(manifest)
    if not paths:
        raise EmptyInputError(f"manifest {manifest} lists no files")
    for f in paths:
        if not os.path.isfile(f):
            raise FileNotFoundError(f"structure file listed in manifest not found: {f}")
    return [parse_pdb_subset(f, strip_hydrogens=cfg["data"]["strip_hydrogens"]) for f in paths]


def _digest_source(cfg):
    out = {k: cfg[k] for k in TRAINING_SECTIONS}
    out["data"] = dict(out["data"], manifest=os.path.basename(cfg["data"]["manifest"] or "toy"))
    return out


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_pretrain(args) -> int:
    cfg = _load(args)
    p = cfg["pretrain"]
    for flag, key in (("mode", "mode"), ("level", "level"), ("epochs", "epochs"), ("seed", "seed"),
                      ("lr", "learning_rate"), ("batch_size", "batch_size"), ("optimizer", "optimizer"),
                      ("seq_loss_reduction", "seq_loss_reduction"),
                      ("struct_loss_reduction", "struct_loss_reduction")):
        v = getattr(args, flag)
        if v is not None:
            p[key] = v
    if args.tied_noise:
        p["tied_noise"] = True
    if args.paper_scale:
        cfg["model"]["paper_scale"] = True
    if args.manifest:
        cfg["data"]["manifest"] = os.path.abspath(args.manifest)
    out_dir = args.out or cfg["output"]["dir"]
    every = p["checkpoint_every"]
    if every < 0:
        raise ConfigError("checkpoint_every must be >= 0")

    gcfg, sched, pcfg, arch = build_objects(cfg)
    dataset = load_dataset(cfg)
    init_seed = cfg["model"]["init_seed"]
    params = ModelParams.init(arch, seed=pcfg.seed if init_seed is None else init_seed)
    digest = config_digest(_digest_source(cfg))

    with output_lock(out_dir):
        log_path = os.path.join(out_dir, "train_log.jsonl")
        open(log_path, "w").close()
        with open(os.path.join(out_dir, "config.json"), "w") as fh:
            json.dump(_digest_source(cfg), fh, sort_keys=True, indent=1)

        def on_epoch_end(epoch, prm):
            if every and (epoch + 1) % every == 0:
                save_checkpoint(os.path.join(out_dir, f"epoch_{epoch + 1:04d}.sdck"),
                                Checkpoint(prm, digest, {"epoch": epoch + 1}))

        res = run_pretraining(dataset, pcfg, params, sched, log_path=log_path,
                              dump_dir=out_dir, on_epoch_end=on_epoch_end)
        final = os.path.join(out_dir, "model.sdck")
        save_checkpoint(final, Checkpoint(res.params, digest, {"epoch": pcfg.epochs}))
        with open(os.path.join(out_dir, "epoch_summary.jsonl"), "w") as fh:
            for rec in res.epoch_summary:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"trained {pcfg.mode}/{pcfg.level} for {pcfg.epochs} epochs on {len(dataset)} proteins; "
          f"{params.num_parameters()} parameters; checkpoint {final}")
    return 0


def cmd_diffuse(args) -> int:
    cfg = _load(args)
    d = cfg["diffuse"]
    src = args.input or d["input"]
    if not src:
        raise ConfigError("diffuse needs an input structure (--input or [diffuse] input)")
    if not os.path.isfile(src):
        raise FileNotFoundError(f"input structure not found: {src}")
    t_list = args.t if args.t else d["t_list"]
    seed = d["seed"] if args.seed is None else args.seed
    level = args.level or d["level"]
    if level not in ("atom", "residue"):
        raise ConfigError(f"level must be atom or residue, got {level!r}")
    try:
        sched = make_schedule(**cfg["schedule"])
    except InvalidParameterError as exc:
        raise ConfigError(str(exc)) from None
    prot = parse_pdb_subset(src, strip_hydrogens=cfg["data"]["strip_hydrogens"], ca_only=(level == "residue"))
    for t in t_list:
        if not 0 <= t <= sched.T:
            raise ConfigError(f"requested step {t} outside [0, {sched.T}]")
    out_dir = args.out or cfg["output"]["dir"]
    with output_lock(out_dir):
        index = []
        for t in t_list:
            stem = os.path.join(out_dir, f"t{t:03d}")
            if t == 0:
                coords, eps, mask, seq = prot.coords, np.zeros_like(prot.coords), np.zeros(0, np.int64), prot.sequence
                pt = prot
            else:
                _, rng_c, _, rng_m = rng_streams([seed, t])
                st = noise_protein(prot, t, sched, rng_c, rng_m)
                pt, coords, eps, mask = st.protein_t, st.protein_t.coords, st.eps_coord, st.mask_set
            np.save(stem + "_coords.npy", coords)
            np.save(stem + "_eps.npy", eps)
            np.save(stem + "_mask.npy", mask)
            with open(stem + ".pdb", "w") as fh:
                fh.write(format_pdb_subset(pt))
            with open(stem + ".seq", "w") as fh:
                fh.write(pt.sequence_string() + "\n")
            index.append({"t": t, "alpha_bar": sched.alpha_bar_at(t), "mask_rate": sched.cum_mask_at(t),
                          "num_masked": int(len(mask))})
        with open(os.path.join(out_dir, "trajectory.json"), "w") as fh:
            json.dump({"input": os.path.abspath(src), "seed": seed, "level": level, "steps": index}, fh,
                      indent=1, sort_keys=True)
    print(f"wrote {len(t_list)} noised states to {out_dir} (mask symbol {MASK_LETTER!r})")
    return 0


def cmd_eval(args) -> int:
    cfg = _load(args)
    e = cfg["eval"]
    ck_path = args.checkpoint or e["checkpoint"]
    if not ck_path or not os.path.isfile(ck_path):
        raise FileNotFoundError(f"checkpoint not found: {ck_path or '(none given)'}")
    if args.manifest:
        cfg["data"]["manifest"] = os.path.abspath(args.manifest)
    ck = load_checkpoint(ck_path)
    arch = ck.params.arch
    cfg["pretrain"]["level"] = arch.level
    cfg["graph"]["angle_bins"] = arch.angle_bins
    cfg["graph"]["line_graph"] = arch.line_graph
    gcfg, sched, pcfg, _ = build_objects(cfg)
    if (gcfg.node_feature_dim, gcfg.edge_feature_dim, gcfg.num_relations) != \
            (arch.node_dim, arch.edge_dim, arch.num_relations):
        raise ConfigError("graph settings do not match the checkpoint architecture")
    out_dir = args.out or cfg["output"]["dir"]
    t_list = args.t if args.t else e["t_list"]
    repeats = args.repeats or e["repeats"]
    seq_only = args.sequence_only or e["sequence_only"]
    fmax_fix = args.fmax_fixture or e["fmax_fixture"]
    rank_fix = args.ranking_fixture or e["ranking_fixture"]
    for f in (fmax_fix, rank_fix):
        if f and not os.path.isfile(f):
            raise FileNotFoundError(f"fixture not found: {f}")
    dataset = load_dataset(cfg)

    rows = denoising_probe(ck.params, dataset, sched, t_list, pcfg.with_(mode="diffpret"),
                           repeats=repeats, seed=e["seed"], sequence_only=seq_only)
    metrics = []
    if fmax_fix:
        with open(fmax_fix) as fh:
            fx = json.load(fh)
        metrics.append(("fmax", fmax(PredictionSet.from_sets(fx["scores"], fx["truth"]))))
    if rank_fix:
        with open(rank_fix) as fh:
            rx = json.load(fh)
        rs = RankingSet.from_triples(rx["triples"])
        metrics.append(("spearman_global", spearman_global(rs)))
        metrics.append(("spearman_mean", spearman_mean(rs)))

    with output_lock(out_dir):
        with open(os.path.join(out_dir, "probe.csv"), "w") as fh:
            fh.write(probe_csv(rows))
        with open(os.path.join(out_dir, "metrics.csv"), "w") as fh:
            fh.write("metric,value\n")
            for k, v in metrics:
                fh.write(f"{k},{v!r}\n")
    print(f"denoising probe ({'sequence only' if seq_only else 'joint'}), {repeats} repeat(s):")
    print(f"{'t':>5} {'struct_loss':>12} {'seq_loss':>9} {'seq_acc':>8}")
    for r in rows:
        print(f"{r['t']:>5} {r['struct_loss']:>12.4f} {r['seq_loss']:>9.4f} {r['seq_accuracy']:>8.4f}")
    for k, v in metrics:
        print(f"{k} = {v:.4f}")
    return 0


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_selfcheck

    if args.checkpoint:
        if not os.path.isfile(args.checkpoint):
            raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
        load_checkpoint(args.checkpoint)
        print(f"PASS  checkpoint_integrity  {args.checkpoint}")
    ok = run_selfcheck(quick=args.quick, out=sys.stdout)
    return 0 if ok else 1


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _positive_list(s):
    return [int(x) for x in s.replace(",", " ").split()]


def build_parser():
    ap = argparse.ArgumentParser(prog="siamdiff", description="Joint sequence-structure diffusion pre-training.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="run pre-training and write checkpoints")
    p.add_argument("--config")
    p.add_argument("--mode", choices=["diffpret", "siamdiff"])
    p.add_argument("--level", choices=["atom", "residue"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--optimizer", choices=["adam", "sgd"])
    p.add_argument("--seq-loss-reduction", choices=["mean", "sum"])
    p.add_argument("--struct-loss-reduction", choices=["mean", "sum"])
    p.add_argument("--tied-noise", action="store_true")
    p.add_argument("--paper-scale", action="store_true", help="6 layers, 512 (residue) or 128 (atom) hidden units")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.set_defaults(func=cmd_pretrain)

    d = sub.add_parser("diffuse", help="dump forward-diffused states of one structure")
    d.add_argument("--config")
    d.add_argument("--input")
    d.add_argument("--t", type=_positive_list, help="comma-separated steps, e.g. 0,10,50,100")
    d.add_argument("--seed", type=int)
    d.add_argument("--level", choices=["atom", "residue"])
    d.add_argument("--out")
    d.set_defaults(func=cmd_diffuse)

    e = sub.add_parser("eval", help="denoising probe and metric fixtures for a checkpoint")
    e.add_argument("--config")
    e.add_argument("--checkpoint")
    e.add_argument("--manifest")
    e.add_argument("--t", type=_positive_list)
    e.add_argument("--repeats", type=int)
    e.add_argument("--sequence-only", action="store_true")
    e.add_argument("--fmax-fixture")
    e.add_argument("--ranking-fixture")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("selfcheck", help="run the built-in invariant checks")
    s.add_argument("--quick", action="store_true")
    s.add_argument("--checkpoint", help="also verify this checkpoint's integrity")
    s.set_defaults(func=cmd_selfcheck)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # map library errors onto exit codes
        code = exit_code_for(exc)
        if code == 1:
            raise
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
