"""Command-line surface: transport checkpoints, run seeded experiments, and
generate the bundled demo fixtures.

Failures print a single ``error_kind: message`` line to stderr and exit 1.
Verbosity is controlled by the TASKPORT_LOG env var (error, info, debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, TaskportError
from .linalg import DEFAULT_RCOND
from .model import (
    LayerSpec,
    TaskVector,
    apply_update,
    init_checkpoint,
    load_activations,
    load_calibration,
    load_checkpoint,
    save_calibration,
    save_checkpoint,
)
from .harness.experiment import (
    ExperimentConfig,
    ModelConfig,
    SeedConfig,
    TaskConfig,
    TrainConfig,
    ablate_seqalign,
    load_config,
    run_experiment,
    write_ablation_csv,
)
from .harness.isometry import build_isometric_target
from .seqalign import STRATEGIES
from .transport import TransportConfig, depth_expand, transport_model

__all__ = ["main"]

log = logging.getLogger("taskport.cli")

# CLI method tokens mapped to library method names.
_METHOD_TOKENS = {
    "theseus": "theseus",
    "pinv": "pinv",
    "pinv-tikh": "pinv_tikhonov",
    "zero-pad": "zero_pad",
    "random": "random",
    "random-source": "random_source",
}

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

# Keeps the fixture isometry streams disjoint from the (seed, index) streams
# used for checkpoint init and calibration draws below.
_FIXTURE_ISOMETRY_OFFSET = 7_700_417


def _setup_logging() -> None:
    name = os.environ.get("TASKPORT_LOG", "error")
    if name not in _LOG_LEVELS:
        raise ConfigError(
            f"TASKPORT_LOG={name!r} is not one of: {', '.join(_LOG_LEVELS)}"
        )
    logging.basicConfig(
        stream=sys.stderr, level=_LOG_LEVELS[name],
        format="%(levelname)s %(name)s: %(message)s",
    )


def _resolve_method(token: str) -> str:
    if token not in _METHOD_TOKENS:
        raise ConfigError(
            f"unknown method {token!r}, valid: {', '.join(_METHOD_TOKENS)}"
        )
    return _METHOD_TOKENS[token]


def _resolve_strategy(token: str) -> str:
    if token not in STRATEGIES:
        raise ConfigError(
            f"unknown seq-align strategy {token!r}, valid: {', '.join(STRATEGIES)}"
        )
    return token


def _emit_json(doc: dict, path: str) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as f:
            f.write(text)


def cmd_transport(args) -> int:
    cfg = TransportConfig(
        method=_resolve_method(args.method),
        strategy=_resolve_strategy(args.seq_align),
        lam=args.lam, rcond=args.rcond, seed=args.seed,
    )
    theta_a = load_checkpoint(args.source)
    theta_a_ft = load_checkpoint(args.finetuned)
    theta_b = load_checkpoint(args.target)
    calib_a, calib_b = load_calibration(args.calib)
    if args.depth_expand and theta_a.depth != theta_b.depth:
        log.info("expanding source depth %d -> %d", theta_a.depth, theta_b.depth)
        theta_a = depth_expand(theta_a, theta_b.depth)
        theta_a_ft = depth_expand(theta_a_ft, theta_b.depth)
    out, report = transport_model(
        theta_a, theta_a_ft, theta_b, calib_a, calib_b, cfg,
        alpha=args.alpha, jobs=args.jobs,
    )
    save_checkpoint(out, args.output)
    log.info("wrote transported checkpoint to %s", args.output)
    _emit_json(report, args.report)
    return 0


def cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    dest = args.output if args.output is not None else (cfg.output_path or "-")
    result = run_experiment(cfg, output_path=dest)
    if dest == "-":
        _emit_json(result, "-")
    else:
        log.info("wrote experiment result to %s", dest)
    return 0


def cmd_ablate_seqalign(args) -> int:
    cfg = load_config(args.config)
    rows = ablate_seqalign(cfg)
    if args.output == "-":
        columns = ("strategy", "accuracy_before", "accuracy_after", "best_alpha", "delta_acc")
        sys.stdout.write(",".join(columns) + "\n")
        for row in rows:
            sys.stdout.write(",".join(
                repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in columns
            ) + "\n")
    else:
        write_ablation_csv(rows, args.output)
        log.info("wrote ablation table to %s", args.output)
    return 0


def cmd_make_fixtures(args) -> int:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    seed = int(args.seed)

    specs = [LayerSpec(d_in=6, d_out=6, has_bias=True, activation="identity")] * 2
    theta_a = init_checkpoint(specs, np.random.SeedSequence((seed, 0)))
    theta_a.meta["role"] = "demo-source"

    rng = np.random.default_rng(np.random.SeedSequence((seed, 1)))
    update = TaskVector(
        deltas=[0.1 * rng.standard_normal(w.shape) for w in theta_a.weights],
        bias_deltas=[0.1 * rng.standard_normal(b.shape) for b in theta_a.biases],
    )
    theta_a_ft = apply_update(theta_a, update, 1.0)
    theta_a_ft.meta["role"] = "demo-source-finetuned"

    theta_b, true_maps = build_isometric_target(
        theta_a, widths=[9, 9, 9], seed=seed + _FIXTURE_ISOMETRY_OFFSET
    )
    theta_b.meta["role"] = "demo-target"

    rng = np.random.default_rng(np.random.SeedSequence((seed, 2)))
    calib_a = rng.standard_normal((64, 5, 6))
    flat = calib_a.reshape(64 * 5, 6) @ true_maps[0].in_map
    calib_b = flat.reshape(64, 5, 9)

    files = {
        "source_a.tpk": lambda p: save_checkpoint(theta_a, p),
        "source_a_ft.tpk": lambda p: save_checkpoint(theta_a_ft, p),
        "target_b.tpk": lambda p: save_checkpoint(theta_b, p),
        "calib.tpc": lambda p: save_calibration(calib_a, calib_b, p),
        "demo_config.json": lambda p: _write_demo_config(p, seed),
    }
    for name, write in files.items():
        path = outdir / name
        write(path)
        print(path)
    return 0


def _write_demo_config(path, seed: int) -> None:
    cfg = ExperimentConfig(
        task=TaskConfig(train_per_class=100, val_per_class=40, test_per_class=60,
                        pretrain_per_class=100),
        source_model=ModelConfig(width=8),
        target_model=ModelConfig(width=12),
        train=TrainConfig(pretrain_steps=150, finetune_steps=250),
        seeds=SeedConfig(data=seed, init=seed, calib=seed),
        regime="independent",
        batches_b=4,
        output_path=None,
    )
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=2)
        f.write("\n")


_MAGICS = {b"TPK1": "checkpoint", b"TPA1": "activations", b"TPC1": "calibration"}


def cmd_inspect(args) -> int:
    with open(args.path, "rb") as f:
        magic = f.read(4)
    if magic not in _MAGICS:
        raise FormatError(
            f"unrecognized magic {magic!r}, known: TPK1, TPA1, TPC1", kind="bad_magic"
        )
    if magic == b"TPK1":
        ckpt = load_checkpoint(args.path)
        doc = {
            "format": "TPK1",
            "layer_count": ckpt.depth,
            "layers": [
                {"d_in": s.d_in, "d_out": s.d_out, "has_bias": s.has_bias,
                 "activation": s.activation}
                for s in ckpt.layer_specs
            ],
            "meta": dict(ckpt.meta),
        }
    elif magic == b"TPA1":
        rec = load_activations(args.path)
        n, l, d_in = rec.h_in.shape
        doc = {
            "format": "TPA1", "layer_index": rec.layer_index,
            "n_samples": n, "seq_len": l, "d_in": d_in, "d_out": rec.h_out.shape[2],
        }
    else:
        inputs_a, inputs_b = load_calibration(args.path)
        doc = {
            "format": "TPC1", "n_samples": inputs_a.shape[0],
            "seq_len_a": inputs_a.shape[1], "d_a": inputs_a.shape[2],
            "seq_len_b": inputs_b.shape[1], "d_b": inputs_b.shape[2],
        }
    _emit_json(doc, "-")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="taskport",
        description="Transport task-specific weight updates between models "
                    "of different sizes via activation alignment.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("transport", formatter_class=fmt,
                       help="transport a fine-tuning update onto a target checkpoint")
    p.add_argument("--source", required=True, help="base source checkpoint (TPK1)")
    p.add_argument("--finetuned", required=True, help="fine-tuned source checkpoint (TPK1)")
    p.add_argument("--target", required=True, help="target checkpoint (TPK1)")
    p.add_argument("--calib", required=True, help="paired calibration inputs (TPC1)")
    p.add_argument("--method", default="theseus",
                   help="one of: " + ", ".join(_METHOD_TOKENS))
    p.add_argument("--seq-align", default="interp2d",
                   help="sequence-length alignment: " + ", ".join(STRATEGIES))
    p.add_argument("--alpha", type=float, default=1.0, help="update scaling")
    p.add_argument("--rcond", type=float, default=DEFAULT_RCOND,
                   help="singular-value cutoff for pseudo-inverses")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="ridge strength for pinv-tikh (default: scaled to the Gram diagonal)")
    p.add_argument("--seed", type=int, default=0, help="seed for the random baselines")
    p.add_argument("--depth-expand", action="store_true",
                   help="expand the source stack to the target depth first")
    p.add_argument("--jobs", type=int, default=1, help="parallel per-layer transport")
    p.add_argument("--output", required=True, help="path for the transported checkpoint")
    p.add_argument("--report", default="-", help="path for the JSON report ('-' = stdout)")
    p.set_defaults(func=cmd_transport)

    p = sub.add_parser("experiment", formatter_class=fmt,
                       help="run a seeded end-to-end transport experiment")
    p.add_argument("config", help="experiment config (JSON)")
    p.add_argument("--output", default=None,
                   help="result path ('-' = stdout; default: config output_path)")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("ablate-seqalign", formatter_class=fmt,
                       help="compare sequence-alignment strategies on one config")
    p.add_argument("config", help="experiment config (JSON)")
    p.add_argument("--output", default="-", help="CSV path ('-' = stdout)")
    p.set_defaults(func=cmd_ablate_seqalign)

    p = sub.add_parser("make-fixtures", formatter_class=fmt,
                       help="write the deterministic demo checkpoints and calibration data")
    p.add_argument("--seed", type=int, default=0, help="generation seed")
    p.add_argument("--outdir", required=True, help="directory to write into")
    p.set_defaults(func=cmd_make_fixtures)

    p = sub.add_parser("inspect", formatter_class=fmt,
                       help="dump a binary file's header as JSON")
    p.add_argument("path", help="TPK1/TPA1/TPC1 file")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        return args.func(args)
    except TaskportError as exc:
        print(f"{exc.kind}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io_error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
