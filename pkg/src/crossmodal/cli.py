"""Command-line front end for the whole pipeline.

One run directory holds a dataset (manifest plus tables), the effective
config, per-step checkpoints and reports. A JSON config file carries
sections ``synth`` / ``synth_sentences``, ``conse``, ``train`` and
``eval``; ``--set section.key=value`` overrides individual entries and
``--seed`` overrides the shared seed. Exit codes: 0 success, 1 usage
error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import data as datamod
from .data import (
    Checkpoint,
    SentenceSynthConfig,
    SynthConfig,
    build_trainer_data,
    checkpoint_load,
    checkpoint_save,
    dump_json,
    gen_synthetic,
    gen_synthetic_sentences,
    load_dataset,
    load_embeddings,
    save_embeddings,
    stack_from_dict,
    stack_to_dict,
)
from .embeddings import ConseConfig, rho_vis
from .errors import DataError, NumericError
from .evaluation import (
    ABLATION_SCENARIOS,
    ablate,
    evaluate,
    evaluate_sentences,
    export_trajectory,
    trajectory_tsv,
)
from .gradcheck import gradient_sweep
from .grounding import GroundingRecipe, ground_vectors, load_benchmark, relatedness_eval
from .numerics import RNG_ALGORITHM, SeededRng
from .trainer import TrainConfig, train_full, train_unsupervised

USAGE_EXIT, DATA_EXIT, NUMERIC_EXIT = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    """Usage problems exit 1 (argparse defaults to 2, which is reserved
    for data errors here)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


class _RunLock:
    """Exclusive lock file guarding a run directory against concurrent
    writers; removed on exit."""

    def __init__(self, run_dir: Path):
        self.path = Path(run_dir) / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise DataError(
                f"run directory locked by another process ({self.path}); "
                "remove the stale lock if no writer is running"
            )
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def _coerce(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def load_config(args) -> dict:
    config = {}
    if getattr(args, "config", None):
        config = datamod.load_json(args.config)
        if not isinstance(config, dict):
            raise DataError(f"{args.config}: config must be a JSON object")
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise DataError(f"--set expects key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        node = config
        *path, leaf = dotted.split(".")
        for part in path:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise DataError(f"--set path {dotted!r} crosses a non-object")
        node[leaf] = _coerce(raw)
    if getattr(args, "seed", None) is not None:
        config["seed"] = args.seed
    if getattr(args, "cycle_norm", None):
        config.setdefault("train", {})["cycle_norm"] = args.cycle_norm
    return config


def _section(config: dict, name: str, cls, **extra):
    known = {f.name for f in fields(cls)}
    payload = dict(config.get(name, {}))
    unknown = set(payload) - known
    if unknown:
        raise DataError(f"config section {name!r}: unknown keys {sorted(unknown)}")
    payload.update(extra)
    if "seed" in known and "seed" not in payload and "seed" in config:
        payload["seed"] = config["seed"]
    if "lambda_grid" in payload:
        payload["lambda_grid"] = tuple(payload["lambda_grid"])
    return cls(**payload)


def _conse_config(config: dict) -> ConseConfig:
    return _section(config, "conse", ConseConfig)


def _dataset(args):
    run_dir = Path(args.run_dir)
    manifest = run_dir / "manifest.json"
    if not manifest.exists():
        raise DataError(f"no manifest at {manifest}; run gen-synth first")
    return load_dataset(manifest)


def _write_checkpoints(run_dir: Path, config: dict, train_cfg: TrainConfig, result):
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    history = [r.to_dict() for r in result.history]
    for step, (img, lbl) in enumerate(result.step_snapshots):
        checkpoint_save(
            ckpt_dir / f"step_{step:03d}.json",
            Checkpoint(
                config={"run": config, "train": train_cfg.to_dict()},
                seed=train_cfg.seed,
                rng_algorithm=RNG_ALGORITHM,
                step_index=step,
                history=history[:step],
                image_stack=img,
                label_stack=lbl,
            ),
        )
    checkpoint_save(
        ckpt_dir / "final.json",
        Checkpoint(
            config={"run": config, "train": train_cfg.to_dict()},
            seed=train_cfg.seed,
            rng_algorithm=RNG_ALGORITHM,
            step_index=len(result.history),
            history=history,
            image_stack=result.image_stack,
            label_stack=result.label_stack,
        ),
    )


def _log_training(run_dir: Path, result):
    lines = [record.log_line() for record in result.history]
    for line in lines:
        print(line)
    (run_dir / "train.log").write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_gen_synth(args) -> int:
    config = load_config(args)
    run_dir = Path(args.run_dir)
    with _RunLock(run_dir):
        if "synth_sentences" in config:
            cfg = _section(config, "synth_sentences", SentenceSynthConfig)
            gen_synthetic_sentences(cfg, run_dir)
        else:
            cfg = _section(config, "synth", SynthConfig)
            gen_synthetic(cfg, run_dir)
        dump_json(config, run_dir / "config.json")
    print(f"dataset written to {run_dir}")
    return 0


def cmd_build_conse(args) -> int:
    config = load_config(args)
    dataset = _dataset(args)
    conse_cfg = _conse_config(config)
    image_ids = list(dataset.probes)
    reps = datamod.conse_matrix(dataset, image_ids, conse_cfg)
    table = datamod.EmbeddingTable(dim=reps.shape[1])
    for iid, vec in zip(image_ids, reps):
        table.add(iid, vec)
    out = Path(args.out) if args.out else Path(args.run_dir) / "conse_vectors.tsv"
    save_embeddings(table, out)
    print(f"{len(image_ids)} image embeddings written to {out}")
    return 0


def cmd_train(args) -> int:
    config = load_config(args)
    run_dir = Path(args.run_dir)
    dataset = _dataset(args)
    conse_cfg = _conse_config(config)
    train_cfg = _section(config, "train", TrainConfig)
    with _RunLock(run_dir):
        pools = build_trainer_data(dataset, conse_cfg)
        result = train_full(train_cfg, pools)
        _write_checkpoints(run_dir, config, train_cfg, result)
        dump_json(config, run_dir / "config.json")
        _log_training(run_dir, result)
    print(f"stop={result.stop_reason} steps={len(result.history)}")
    return 0


def cmd_train_unsup(args) -> int:
    config = load_config(args)
    run_dir = Path(args.run_dir)
    dataset = _dataset(args)
    if not dataset.sentences:
        raise DataError("train-unsup needs a dataset with a sentence pool")
    conse_cfg = _conse_config(config)
    train_cfg = _section(config, "train", TrainConfig)
    with _RunLock(run_dir):
        pools = build_trainer_data(dataset, conse_cfg)
        result = train_unsupervised(train_cfg, pools)
        _write_checkpoints(run_dir, config, train_cfg, result)
        dump_json(config, run_dir / "config.json")
        _log_training(run_dir, result)
    print(f"stop={result.stop_reason} criterion={result.validation_history[-1]:.6f}")
    return 0


def _stacks_from_checkpoint(args):
    run_dir = Path(args.run_dir)
    path = Path(args.checkpoint) if args.checkpoint else run_dir / "checkpoints" / "final.json"
    if not path.exists():
        raise DataError(f"no checkpoint at {path}; run train first")
    ckpt = checkpoint_load(path)
    return ckpt.image_stack, ckpt.label_stack


def cmd_eval(args) -> int:
    config = load_config(args)
    dataset = _dataset(args)
    conse_cfg = _conse_config(config)
    image_stack, label_stack = _stacks_from_checkpoint(args)
    if dataset.sentences:
        report = evaluate_sentences(
            image_stack, label_stack, dataset, conse_cfg,
            direction=args.direction, exact50=args.mfr_exact50,
        )
    else:
        report = evaluate(
            image_stack, label_stack, dataset, conse_cfg,
            mode=args.mode, split=args.split, exact50=args.mfr_exact50,
        )
    out = Path(args.out) if args.out else Path(args.run_dir) / f"report_{report.mode}_{report.split}.json"
    dump_json(report.to_dict(), out)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_ablate(args) -> int:
    config = load_config(args)
    run_dir = Path(args.run_dir)
    dataset = _dataset(args)
    conse_cfg = _conse_config(config)
    train_cfg = _section(config, "train", TrainConfig)
    with _RunLock(run_dir):
        pools = build_trainer_data(dataset, conse_cfg)
        table = ablate(
            train_cfg, pools, dataset, conse_cfg,
            scenarios=tuple(args.scenarios) if args.scenarios else ABLATION_SCENARIOS,
            exact50=args.mfr_exact50,
        )
        doc = {
            scenario: {mode: rep.to_dict() for mode, rep in row["reports"].items()}
            for scenario, row in table.items()
        }
        out = Path(args.out) if args.out else run_dir / "ablation.json"
        dump_json(doc, out)
    for scenario, row in table.items():
        zsl = row["reports"]["zsl"]
        print(f"{scenario:>6}: zsl mfr={zsl.mfr:.2f} fh1={zsl.fh[1]:.2f} fh20={zsl.fh[20]:.2f}")
    print(f"table written to {out}")
    return 0


def cmd_ground(args) -> int:
    table = load_embeddings(args.embeddings)
    sup_stack = checkpoint_load(args.sup_checkpoint).label_stack if args.sup_checkpoint else None
    trans_stack = checkpoint_load(args.trans_checkpoint).label_stack if args.trans_checkpoint else None
    benches = [load_benchmark(p) for p in args.benchmarks]
    vocab = {tok for b in benches for a_, b_, _ in b.pairs for tok in (a_, b_)}
    covered = datamod.EmbeddingTable(dim=table.dim)
    for tok in table.tokens():
        if tok in vocab:
            covered.add(tok, table[tok])
    fit_table = covered if covered.entries else table
    recipe = GroundingRecipe(args.recipe, args.output_dim)
    grounded = ground_vectors(fit_table, sup_stack, trans_stack, recipe)
    results = {}
    for bench in benches:
        score, coverage = relatedness_eval(grounded, bench)
        results[bench.name] = {"spearman": score, "coverage": coverage}
        print(f"{bench.name}: spearman={score:.2f} coverage={coverage:.2%}")
    if args.out:
        dump_json({"recipe": args.recipe, "results": results}, args.out)
    if args.save_vectors:
        save_embeddings(grounded, args.save_vectors)
    return 0


def cmd_rho_vis(args) -> int:
    text = load_embeddings(args.text)
    vis = load_embeddings(args.vis)
    shared = [tok for tok in text.tokens() if tok in vis]
    if len(shared) < 3:
        raise DataError(f"only {len(shared)} shared tokens between the two tables")
    value = rho_vis(
        [text[t] for t in shared],
        [vis[t] for t in shared],
        n_pairs=args.pairs,
        rng=SeededRng(args.seed if args.seed is not None else 0),
    )
    print(f"rho_vis = {value:.4f} over {len(shared)} aligned items")
    return 0


def cmd_grad_check(args) -> int:
    sweep = gradient_sweep(seed=args.seed if args.seed is not None else 0, points=args.points)
    worst = max(sweep.values())
    for name, err in sweep.items():
        print(f"{name}: {err:.3e}")
    print(f"max relative error: {worst:.3e}")
    if worst >= 1e-4:
        print("FAIL: gradient mismatch above 1e-4", file=sys.stderr)
        return NUMERIC_EXIT
    return 0


def cmd_export_traj(args) -> int:
    config = load_config(args)
    dataset = _dataset(args)
    conse_cfg = _conse_config(config)
    ckpt_dir = Path(args.run_dir) / "checkpoints"
    steps = sorted(ckpt_dir.glob("step_*.json"))
    if len(steps) < 2:
        raise DataError(f"need at least 2 step checkpoints under {ckpt_dir}")
    snapshots = []
    for path in steps:
        ckpt = checkpoint_load(path)
        snapshots.append((ckpt.image_stack, ckpt.label_stack))
    rows = export_trajectory(
        snapshots, dataset, conse_cfg,
        n_classes=args.classes,
        rng=SeededRng(args.seed if args.seed is not None else 0),
    )
    out = Path(args.out) if args.out else Path(args.run_dir) / "trajectory.tsv"
    out.write_text(trajectory_tsv(rows), encoding="utf-8")
    print(f"{len(rows)} coordinates written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="crossmodal",
        description="Cross-modal embedding alignment for transductive zero-shot retrieval",
    )
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, run_dir=True, config=True):
        if run_dir:
            p.add_argument("--run-dir", required=True, help="run directory")
        if config:
            p.add_argument("--config", help="JSON config file")
            p.add_argument("--set", action="append", metavar="KEY=VALUE",
                           help="override a config entry (dotted path)")
            p.add_argument("--seed", type=int, help="override the run seed")

    p = sub.add_parser("gen-synth", help="generate a synthetic benchmark")
    common(p)
    p.set_defaults(fn=cmd_gen_synth)

    p = sub.add_parser("build-conse", help="write image embeddings as a table")
    common(p)
    p.add_argument("--out", help="output TSV (default run dir)")
    p.set_defaults(fn=cmd_build_conse)

    p = sub.add_parser("train", help="alternating supervised/transductive training")
    common(p)
    p.add_argument("--cycle-norm", choices=["l2", "l2_squared"])
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("train-unsup", help="single transductive step on sentence pools")
    common(p)
    p.add_argument("--cycle-norm", choices=["l2", "l2_squared"])
    p.set_defaults(fn=cmd_train_unsup)

    p = sub.add_parser("eval", help="retrieval evaluation from a checkpoint")
    common(p)
    p.add_argument("--mode", choices=["zsl", "gzsl"], default="zsl")
    p.add_argument("--split", default="all", help="all|2hop|3hop|custom tag")
    p.add_argument("--direction", choices=["text_to_image", "image_to_text"],
                   default="text_to_image", help="sentence datasets only")
    p.add_argument("--mfr-exact50", action="store_true",
                   help="rescale ranks so a random model scores exactly 50")
    p.add_argument("--checkpoint", help="checkpoint path (default final)")
    p.add_argument("--out", help="report path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train & evaluate every scenario")
    common(p)
    p.add_argument("--cycle-norm", choices=["l2", "l2_squared"])
    p.add_argument("--mfr-exact50", action="store_true")
    p.add_argument("--scenarios", nargs="*", choices=list(ABLATION_SCENARIOS))
    p.add_argument("--out", help="table path (default run dir)")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("ground", help="grounded word vectors + relatedness eval")
    p.add_argument("--embeddings", required=True, help="word vector TSV")
    p.add_argument("--sup-checkpoint", help="checkpoint providing the supervised text-side stack")
    p.add_argument("--trans-checkpoint", help="checkpoint providing the transductive text-side stack")
    p.add_argument("--recipe", default="x",
                   choices=["x", "sup", "x+sup", "trans", "x+trans", "sup+trans"])
    p.add_argument("--output-dim", type=int, help="projection size for concatenations")
    p.add_argument("--benchmarks", nargs="+", required=True, help="relatedness TSV files")
    p.add_argument("--out", help="results JSON")
    p.add_argument("--save-vectors", help="write grounded vectors to a TSV")
    p.set_defaults(fn=cmd_ground)

    p = sub.add_parser("rho-vis", help="cross-space agreement of two vector tables")
    p.add_argument("--text", required=True)
    p.add_argument("--vis", required=True)
    p.add_argument("--pairs", type=int, help="sampled pairs (default exhaustive/100k)")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_rho_vis)

    p = sub.add_parser("grad-check", help="finite-difference check of all objectives")
    p.add_argument("--seed", type=int)
    p.add_argument("--points", type=int, default=20)
    p.set_defaults(fn=cmd_grad_check)

    p = sub.add_parser("export-traj", help="per-step 2-D coordinates of labels and centroids")
    common(p)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_export_traj)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "fn", None):
        parser.print_usage(sys.stderr)
        return USAGE_EXIT
    try:
        return args.fn(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return NUMERIC_EXIT


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
