"""Operator entry point.

    protodetect gen-data  --config cfg.json --out dataset.json
    protodetect train     --config cfg.json --dataset dataset.json --out ckpt.json
    protodetect eval      --config cfg.json --dataset dataset.json \
                          --checkpoint ckpt.json --mode fewshot --out-prefix report
    protodetect gradcheck --config cfg.json

Every command is a pure function of (config, input files, seed);
re-runs produce byte-identical outputs. Exit codes: 0 ok, 2 config or
input error, 3 numerical divergence, 4 gradient-check failure.
"""

import argparse
import json
import sys

import numpy as np

from .config import ConfigError, file_digest, load_run_config
from .embedder import load_checkpoint, save_checkpoint
from .evaluation import evaluate, evaluate_openset
from .gradcheck import run_suite
from .inference import (FEWSHOT, MODES, OPENSET, ZS_MPS, ZS_MPU, ZS_UO,
                        Detection, ProtocolSpec, assemble_protocol,
                        detect_scene, save_detections)
from .prototypes import SupportSet
from .simulator import generate_world, load_world, save_world
from .trainer import heldout_accuracy, scene_background_features, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_GRADCHECK = 4


class CliError(Exception):
    def __init__(self, msg, code=EXIT_CONFIG):
        super().__init__(msg)
        self.code = code


def _provenance(cfg, dataset_path=None):
    out = {"config_digest": cfg.digest()}
    if dataset_path is not None:
        out["dataset_digest"] = file_digest(dataset_path)
    return out


def cmd_gen_data(args):
    cfg = load_run_config(args.config, args.set or ())
    try:
        world = generate_world(cfg.world)
        save_world(args.out, world)
    except OSError as e:
        raise CliError(f"cannot write dataset: {e}")
    except (ValueError, RuntimeError) as e:
        raise CliError(str(e))
    print(f"dataset digest: {file_digest(args.out)}")
    return EXIT_OK


def _load_world_checked(cfg, dataset_path):
    try:
        world = load_world(dataset_path)
    except (OSError, ValueError, KeyError) as e:
        raise CliError(f"cannot read dataset: {e}")
    if cfg.expected_dataset_digest:
        digest = file_digest(dataset_path)
        if digest != cfg.expected_dataset_digest:
            raise CliError(f"dataset digest mismatch: {digest}")
    return world


def cmd_train(args):
    cfg = load_run_config(args.config, args.set or ())
    world = _load_world_checked(cfg, args.dataset)
    try:
        result = train(world, cfg.train)
    except FloatingPointError as e:
        print(str(e), file=sys.stderr)
        return EXIT_DIVERGED
    save_checkpoint(args.out, result.net, result.clf,
                    extra=_provenance(cfg, args.dataset))
    acc = heldout_accuracy(result.net, result.bank, world.test_scenes)
    result.log.append({"final": True, "accuracy": acc})
    log_path = args.log or (args.out + ".log.jsonl")
    result.write_log(log_path)
    print(f"checkpoint: {args.out}")
    print(f"final heldout accuracy: {acc:.4f}")
    return EXIT_OK


def _background_prototype_from(world, net):
    feats = [f for s in world.train_scenes for f in scene_background_features(s)]
    if not feats:
        raise CliError("no background pool in training scenes")
    emb, _ = net.forward_batch(np.asarray(feats))
    return emb.mean(axis=0)


def run_protocol(cfg, world, net, mode):
    """Shared by cmd_eval and tests: detections + report for one mode."""
    seen = SupportSet(world.support_seen)
    unseen = SupportSet(world.support_unseen) if world.support_unseen else None
    if mode in (ZS_UO, ZS_MPU, ZS_MPS, OPENSET) and unseen is None:
        raise CliError(f"mode {mode} requires unseen support classes")
    p0 = _background_prototype_from(world, net)
    unknown_id = max(world.seen_ids + world.unseen_ids) + 1
    spec = ProtocolSpec(mode=mode, unknown_id=unknown_id,
                        unknown_includes_background=cfg.protocol.get(
                            "unknown_includes_background", True))
    bank, eval_ids = assemble_protocol(spec, seen, unseen, net, p0)
    per_scene = [detect_scene(s, net, bank) for s in world.test_scenes]
    if mode == OPENSET:
        report = evaluate_openset(per_scene, world.test_scenes,
                                  seen.class_ids, unknown_id, world.unseen_ids)
    else:
        report = evaluate(per_scene, world.test_scenes, eval_ids, protocol=mode)
    return per_scene, report


def cmd_eval(args):
    cfg = load_run_config(args.config, args.set or ())
    mode = args.mode or cfg.protocol["mode"]
    if mode not in MODES:
        raise CliError(f"unknown mode {mode!r}")
    world = _load_world_checked(cfg, args.dataset)
    try:
        net, clf = load_checkpoint(args.checkpoint)
    except (OSError, ValueError, KeyError) as e:
        raise CliError(f"cannot read checkpoint: {e}")
    per_scene, report = run_protocol(cfg, world, net, mode)
    header = _provenance(cfg, args.dataset)
    header["mode"] = mode
    save_detections(args.out_prefix + ".detections.json", per_scene, header)
    report.save_json(args.out_prefix + ".json", header)
    report.save_csv(args.out_prefix + ".csv", header)
    print(f"{mode}: mAP={report.mAP:.4f} mAR={report.mAR:.4f}")
    for label, row in sorted(report.extra_rows.items()):
        print(f"  {label}: mAP={row['mAP']:.4f} mAR={row['mAR']:.4f}")
    return EXIT_OK


def cmd_gradcheck(args):
    load_run_config(args.config, args.set or ())  # validates only
    results = run_suite()
    tol = 1e-4
    failed = [t for t, e in results.items() if e > tol]
    for term, err in results.items():
        status = "ok" if err <= tol else "FAIL"
        print(f"{term:8s} max relative error {err:.3e}  {status}")
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="protodetect")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True)
        sp.add_argument("--set", action="append", metavar="PATH=VALUE",
                        help="override a config value by dot path")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker threads (default 1 for determinism)")

    sp = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="run the two-stage training loop")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--log", help="run log path (default: <out>.log.jsonl)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="run a protocol and write reports")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--mode", choices=MODES)
    sp.add_argument("--out-prefix", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    common(sp)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CliError as e:
        print(str(e), file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
