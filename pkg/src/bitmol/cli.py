"""Command-line entry point.

Every command reads one declarative config file; flags only override the seed,
the output directory, the step count and input paths. Exit status: 0 success,
1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import checkpoint
from . import config as config_mod
from .config import ConfigError, RunConfig
from .encode import dump_encoding
from .model import BitConfig, init_params
from .molgraph import GenConfig, GraphError, graph_stats, parse_jsonl, synth_generate, write_jsonl
from .numcore import OptState, ParamStore, grad_check
from .pretrain import Pools, TrainState, pretrain_step
from .tasks import (RetrievalData, affinity_dataset, affinity_finetune, classification_dataset, classify_finetune,
                    evaluate_retrieval, pipeline_screen, retrieval_dataset, retrieval_finetune)

log = logging.getLogger("bitmol")

PRETRAIN_CKPT = "pretrain.ckpt"
LOSS_LOG = "loss_log.jsonl"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _gen_config(cfg: RunConfig) -> GenConfig:
    d = cfg.data
    return GenConfig(n_molecules=d.n_molecules, n_pockets=d.n_pockets, n_complexes=d.n_complexes,
                     n_families=d.n_families, mol_atoms=tuple(d.mol_atoms), pocket_atoms=tuple(d.pocket_atoms))


def _entries(cfg: RunConfig, input_path: str | None = None):
    path = input_path or cfg.data.path
    if path:
        return parse_jsonl(path)
    return synth_generate(cfg.data.seed, _gen_config(cfg))


def report(task: str, split: str, metrics: dict, digest: str, **extra) -> dict:
    return {"task": task, "split": split, "metrics": metrics, "config_digest": digest, **extra}


def fresh_state(cfg: RunConfig, digest: str) -> TrainState:
    return TrainState(init_params(cfg.model, cfg.seed), OptState(), 0, cfg.seed, digest)


def starting_state(cfg: RunConfig, digest: str, out: Path) -> tuple[TrainState, BitConfig, str]:
    """Explicit init checkpoint, else this run's pre-training checkpoint, else fresh weights."""
    if cfg.init:
        state, mcfg, _ = checkpoint.load(cfg.init)
        return state, mcfg, cfg.init
    auto = out / PRETRAIN_CKPT
    if cfg.pretrain.steps > 0 and auto.exists():
        state, mcfg, _ = checkpoint.load(auto)
        return state, mcfg, str(auto)
    return fresh_state(cfg, digest), cfg.model, "none"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(cfg: RunConfig, args, digest: str) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = synth_generate(cfg.data.seed, _gen_config(cfg))
    path = out / "data.jsonl"
    write_jsonl(entries, path)
    print(json.dumps({"written": str(path), "entries": len(entries)}))
    return 0


def cmd_encode(cfg: RunConfig, args, digest: str) -> int:
    if not args.dump:
        raise UsageError("encode currently supports only --dump")
    if not args.input:
        raise UsageError("encode --dump needs --input FILE")
    entries = parse_jsonl(args.input)
    lines = [dump_encoding(e, cfg.model.d_max, cfg.model.degree_cap) for e in entries]
    if args.output:
        Path(args.output).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    else:
        for line in lines:
            print(line)
    return 0


def cmd_stats(cfg: RunConfig, args, digest: str) -> int:
    entries = _entries(cfg, args.input)
    stats = graph_stats(entries)
    text = json.dumps(stats, sort_keys=True)
    if args.output:
        Path(args.output).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_pretrain(cfg: RunConfig, args, digest: str) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    mcfg = cfg.model
    if cfg.init:
        state, mcfg, _ = checkpoint.load(cfg.init)
    else:
        state = fresh_state(cfg, digest)
    # a resumed run keeps the seed its batches were drawn with
    pcfg = dataclasses.replace(cfg.pretrain, seed=state.seed)
    pools = Pools.from_entries(_entries(cfg, args.input), mcfg.d_max, mcfg.degree_cap)
    log_path = out / LOSS_LOG
    mode = "a" if cfg.init else "w"
    with open(log_path, mode, encoding="utf-8") as fh:
        while state.step < pcfg.steps:
            state, rec = pretrain_step(state, pools, mcfg, cfg.corruption, pcfg)
            fh.write(json.dumps(rec) + "\n")
            if args.checkpoint_every and state.step % args.checkpoint_every == 0:
                checkpoint.save(out / f"pretrain-step{state.step}.ckpt", state, mcfg)
    state.config_digest = digest
    checkpoint.save(out / PRETRAIN_CKPT, state, mcfg)
    print(json.dumps({"steps": state.step, "loss_log": str(log_path), "checkpoint": str(out / PRETRAIN_CKPT)}))
    return 0


def run_affinity(cfg: RunConfig, state: TrainState, mcfg: BitConfig, digest: str):
    t = cfg.affinity
    fcfg = dataclasses.replace(t.finetune, seed=cfg.seed)
    entries = affinity_dataset(t.data_seed, t.n_complexes)
    state, metrics, history = affinity_finetune(state, entries, mcfg, fcfg)
    return state, report("affinity", "held_out", metrics.to_json(), digest, train_loss=history)


def run_classify(cfg: RunConfig, state: TrainState, mcfg: BitConfig, digest: str):
    t = cfg.classify
    fcfg = dataclasses.replace(t.finetune, seed=cfg.seed)
    entries = classification_dataset(t.data_seed, t.n_molecules)
    state, auc, history = classify_finetune(state, entries, mcfg, fcfg, use_3d=t.use_3d)
    return state, report("classify", "held_out", {"auc": auc}, digest, train_loss=history)


def retrieval_splits(t) -> tuple[RetrievalData, RetrievalData]:
    data = retrieval_dataset(t.data_seed, t.train_pockets + t.eval_pockets, t.train_ligands + t.eval_ligands,
                             t.n_families)
    train = RetrievalData(data.pockets[:t.train_pockets], data.ligands[:t.train_ligands])
    held = RetrievalData(data.pockets[t.train_pockets:], data.ligands[t.train_ligands:])
    return train, held


def run_retrieval(cfg: RunConfig, state: TrainState, mcfg: BitConfig, digest: str):
    t = cfg.retrieval
    fcfg = dataclasses.replace(t.finetune, seed=cfg.seed)
    train, held = retrieval_splits(t)
    state, history = retrieval_finetune(state, train, mcfg, fcfg)
    metrics = evaluate_retrieval(state.params, held, mcfg, t.n_actives, t.pool_size, cfg.seed)
    return state, report("retrieval", "held_out", metrics, digest, train_loss=history)


RUNNERS = {"finetune-affinity": run_affinity, "finetune-retrieval": run_retrieval, "finetune-classify": run_classify}


def cmd_finetune(cfg: RunConfig, args, digest: str) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    state, mcfg, source = starting_state(cfg, digest, out)
    state, rep = RUNNERS[args.command](cfg, state, mcfg, digest)
    rep["init"] = source
    state.config_digest = digest
    checkpoint.save(out / f"{args.command}.ckpt", state, mcfg)
    _write_json(out / f"{args.command}.json", rep)
    print(json.dumps(rep["metrics"], sort_keys=True))
    return 0


def cmd_eval(cfg: RunConfig, args, digest: str) -> int:
    """Fine-tune and evaluate every downstream task from one starting point."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    state, mcfg, source = starting_state(cfg, digest, out)
    if cfg.pretrain.steps > 0 and source == "none":
        raise FileNotFoundError(f"pre-training is configured but {out / PRETRAIN_CKPT} is missing; "
                                f"run 'pretrain' first or set pretrain.steps to 0")
    reports = []
    for name in ("finetune-affinity", "finetune-retrieval", "finetune-classify"):
        _, rep = RUNNERS[name](cfg, state, mcfg, digest)
        rep.pop("train_loss", None)
        reports.append(rep)
    summary = {"config_digest": digest, "init": source, "reports": reports}
    _write_json(out / "metrics.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_screen(cfg: RunConfig, args, digest: str) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    t = cfg.screen
    retr_path = t.retrieval_checkpoint or str(out / "finetune-retrieval.ckpt")
    clf_path = t.classifier_checkpoint or str(out / "finetune-classify.ckpt")
    r_state, mcfg, _ = checkpoint.load(retr_path)
    c_state, _, _ = checkpoint.load(clf_path)
    data = retrieval_dataset(t.data_seed, t.n_pockets, t.library_size, cfg.retrieval.n_families)
    rows = pipeline_screen(r_state.params, mcfg, data.pockets, data.ligands, t.k1, t.m, cfg.seed,
                           classifier=c_state.params)
    path = out / "screen.jsonl"
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows), encoding="utf-8")
    print(json.dumps({"candidates": len(rows), "output": str(path), "config_digest": digest}))
    return 0


def grad_check_loss(mcfg: BitConfig, seed: int):
    """Full pre-training loss of the tiny model on a fixed batch of small molecules."""
    from .batch import tokenize
    from .pretrain import CorruptionConfig, make_pretrain_batch, pretrain_losses
    gen = GenConfig(n_molecules=4, n_pockets=0, n_complexes=0, mol_atoms=(4, 4))
    samples = [tokenize(e, mcfg.d_max, mcfg.degree_cap) for e in synth_generate(seed, gen)]
    ccfg = CorruptionConfig(p_2d=0.0, p_3d=0.0, p_2d3d=1.0)
    rngs = [np.random.default_rng(np.random.SeedSequence([seed, i])) for i in range(len(samples))]
    pb = make_pretrain_batch(samples, ccfg, rngs)
    return lambda p: pretrain_losses(pb, p, mcfg, ccfg)[0]


def cmd_grad_check(cfg: RunConfig, args, digest: str) -> int:
    mcfg = cfg.model
    params = init_params(mcfg, cfg.seed)
    rep = grad_check(grad_check_loss(mcfg, cfg.seed), params, sample=args.sample, eps=args.eps, tol=args.tol,
                     seed=cfg.seed)
    out = rep.to_json()
    out["config_digest"] = digest
    if args.output:
        _write_json(Path(args.output), out)
    print(json.dumps({"passed": rep.passed, "max_rel_error": rep.max_rel_error, "checked": len(rep.checked)}))
    return 0 if rep.passed else 1


COMMANDS = {
    "gen-data": cmd_gen_data,
    "encode": cmd_encode,
    "stats": cmd_stats,
    "pretrain": cmd_pretrain,
    "finetune-affinity": cmd_finetune,
    "finetune-retrieval": cmd_finetune,
    "finetune-classify": cmd_finetune,
    "eval": cmd_eval,
    "screen": cmd_screen,
    "grad-check": cmd_grad_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bitmol", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML or JSON run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--input", help="JSONL dataset overriding data.path")
        p.add_argument("--output", help="file to write the primary output to")
        if name == "pretrain":
            p.add_argument("--steps", type=int)
            p.add_argument("--checkpoint-every", type=int, default=0)
            p.add_argument("--init", help="checkpoint to resume from")
        if name.startswith("finetune") or name == "eval":
            p.add_argument("--init", help="checkpoint to start from")
        if name == "encode":
            p.add_argument("--dump", action="store_true", help="emit structural encodings as JSON lines")
        if name == "grad-check":
            p.add_argument("--sample", type=int, default=50)
            p.add_argument("--eps", type=float, default=1e-5)
            p.add_argument("--tol", type=float, default=1e-3)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = config_mod.load(args.config)
    if args.command == "grad-check" and not args.config:
        cfg.model = BitConfig.tiny()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if getattr(args, "steps", None) is not None:
        cfg.pretrain.steps = args.steps
        cfg.pretrain.warmup = min(cfg.pretrain.warmup, max(0, args.steps - 1))
    if getattr(args, "init", None):
        cfg.init = args.init
    if args.input:
        cfg.data.path = args.input
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # argparse exits with status 2 on usage errors
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    digest = config_mod.digest(cfg)
    try:
        return COMMANDS[args.command](cfg, args, digest)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (GraphError, checkpoint.CheckpointError, ValueError, FileNotFoundError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
