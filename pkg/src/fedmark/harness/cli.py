"""Command-line entry point.

Subcommands: train, embed, attack, verify, sweep, report.
Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

import argparse
import json
import os
import subprocess
import sys

from fedmark.errors import ConfigurationError, FedmarkError, StageError
from fedmark.harness.artifacts import fmt, load_model, save_model, write_csv, write_json
from fedmark.harness.config import apply_overrides, load_config
from fedmark.harness import runner
from fedmark.trigger import load_key, trig_cons
from fedmark.watermark import ModelAPI, RemoteModelAPI, balanced_subset, verify

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def _common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="path to the experiment config file")
    sub.add_argument("--seed", type=int, help="override the FL seed")
    sub.add_argument("--out", help="override the output directory")
    sub.add_argument("--dataset", choices=["mnist", "synth"], help="dataset source")
    sub.add_argument(
        "--partition", choices=["iid", "dirichlet", "pathological"], help="client split"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedmark",
        description="Federated-learning watermark simulator: train, embed, attack, verify.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("train", help="clean federated training (no watermark)")
    _common_flags(p)
    p.add_argument("--quiet", action="store_true", help="suppress the live round stream")

    p = subs.add_parser("embed", help="federated training with watermark embedding")
    _common_flags(p)
    p.add_argument("--quiet", action="store_true", help="suppress the live round stream")

    p = subs.add_parser("attack", help="run the removal/forgery attack grid")
    _common_flags(p)
    p.add_argument("--model", help="model file (default: <out>/model_watermarked.npz)")

    p = subs.add_parser("verify", help="black-box ownership verification")
    _common_flags(p)
    p.add_argument("--model", help="model file (default: <out>/model_watermarked.npz)")
    p.add_argument(
        "--api-cmd",
        help="external model endpoint command speaking the line protocol "
        "(base64 image in, integer label out); default verifies in-process",
    )

    p = subs.add_parser("sweep", help="patch-parameter study")
    _common_flags(p)
    p.add_argument(
        "--settings",
        default="4x4,6x6,16x16",
        help="comma-separated MUxNU pairs (default 4x4,6x6,16x16)",
    )

    p = subs.add_parser("report", help="render tables from a finished run")
    p.add_argument("--out", default="out", help="experiment output directory")
    return parser


def _load(args) -> "runner.ExperimentConfig":
    cfg = load_config(args.config)
    return apply_overrides(
        cfg,
        seed=getattr(args, "seed", None),
        out=getattr(args, "out", None),
        dataset=getattr(args, "dataset", None),
        partition=getattr(args, "partition", None),
    )


def cmd_train(args, watermarked: bool) -> int:
    cfg = _load(args)
    cfg.validate()
    train, test = runner.build_datasets(cfg)
    sk, embed_trig, held_back = runner.build_trigger(cfg, train.num_classes, train.image_shape[2])
    stream = None if args.quiet else sys.stdout
    state = runner.run_training(
        cfg, train, test, held_back.dataset, embed_trig if watermarked else None, stream=stream
    )
    os.makedirs(cfg.out_dir, exist_ok=True)
    name = "model_watermarked.npz" if watermarked else "model_clean.npz"
    save_model(state.model, os.path.join(cfg.out_dir, name))
    csv_name = "rounds_watermarked.csv" if watermarked else "rounds_clean.csv"
    write_csv(
        os.path.join(cfg.out_dir, csv_name), runner.ROUNDS_HEADER, runner.rounds_rows(state)
    )
    if watermarked:
        from fedmark.data import save_fmds
        from fedmark.trigger import save_key

        save_key(sk, cfg.trigger.pattern_seed, os.path.join(cfg.out_dir, "key.fmsk"))
        save_fmds(embed_trig.dataset, os.path.join(cfg.out_dir, "trigger_embed.fmds"))
        save_fmds(held_back.dataset, os.path.join(cfg.out_dir, "trigger_verify.fmds"))
    last = state.history[-1]
    print(
        f"done: test_acc={fmt(last.test_acc, 4)} wm_acc={fmt(last.wm_acc, 4)} "
        f"model={os.path.join(cfg.out_dir, name)}"
    )
    return EXIT_OK


def cmd_attack(args) -> int:
    cfg = _load(args)
    cfg.validate()
    model_path = args.model or os.path.join(cfg.out_dir, "model_watermarked.npz")
    if not os.path.exists(model_path):
        raise ConfigurationError(f"model file not found: {model_path} (run `fedmark embed` first)")
    model = load_model(model_path)
    _, test = runner.build_datasets(cfg)
    _, _, held_back = runner.build_trigger(cfg, model.num_classes, model.input_shape[2])
    gamma, _ = runner.resolve_threshold(cfg, model.num_classes)
    heldout = runner._finetune_data(cfg)
    rows = runner.run_attack_grid(cfg, model, heldout, held_back.dataset, test, gamma)
    write_csv(
        os.path.join(cfg.out_dir, "attacks.csv"),
        runner.ATTACK_CSV_HEADER,
        [[r["attack"], r["param"], fmt(r["wm_acc"]), fmt(r["test_acc"]), r["verdict"]] for r in rows],
    )
    for r in rows:
        print(f"{r['attack']:<10} {r['param']:<28} wm={fmt(r['wm_acc'], 4)} "
              f"test={fmt(r['test_acc'], 4)} {r['verdict']}")
    broken = [r for r in rows if r["verdict"] == "broken" or r["verdict"] == "forged"]
    print(f"attacks complete: {len(rows)} grid points, {len(broken)} broke the watermark")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _load(args)
    model_path = args.model or os.path.join(cfg.out_dir, "model_watermarked.npz")
    key_path = os.path.join(cfg.out_dir, "key.fmsk")
    if not os.path.exists(key_path):
        raise ConfigurationError(f"key file not found: {key_path}")
    sk, _ = load_key(key_path)
    height, width = cfg.image_size()
    held_back = trig_cons(
        sk, cfg.trigger.verify_patterns, height, width, cfg.trigger.verify_pattern_seed
    )
    gamma, n_s = runner.resolve_threshold(cfg, sk.k)
    subset = balanced_subset(held_back, n_s, seed=cfg.trigger.verify_pattern_seed)

    proc = None
    if args.api_cmd:
        proc = subprocess.Popen(
            args.api_cmd,
            shell=True,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
        )
        api = RemoteModelAPI(proc.stdout, proc.stdin)
    else:
        if not os.path.exists(model_path):
            raise ConfigurationError(f"model file not found: {model_path}")
        api = ModelAPI.from_model(load_model(model_path))
    try:
        report = verify(api, subset, gamma)
    finally:
        if proc is not None:
            proc.stdin.close()
            proc.wait(timeout=10)
    write_json(
        os.path.join(cfg.out_dir, "verification.json"),
        json.loads(report.to_json()),
    )
    print(report.to_json())
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    cfg.validate()
    settings = []
    for part in args.settings.split(","):
        mu, _, nu = part.strip().partition("x")
        try:
            settings.append((int(mu), int(nu)))
        except ValueError:
            raise ConfigurationError(f"bad sweep setting {part!r}, expected MUxNU") from None
    rows = runner.sweep_patch_params(cfg, settings)
    print(f"sweep complete: {len(rows)} settings -> {os.path.join(cfg.out_dir, 'sweep.csv')}")
    return EXIT_OK


def cmd_report(args) -> int:
    summary_path = os.path.join(args.out, "summary.json")
    if not os.path.exists(summary_path):
        raise ConfigurationError(f"no summary at {summary_path}; run an experiment first")
    with open(summary_path) as f:
        summary = json.load(f)
    print(f"experiment report ({args.out})")
    print("-" * 56)
    for key in (
        "effectiveness",
        "function_preservation",
        "false_positive_rate",
        "clean_test_acc",
        "watermarked_test_acc",
    ):
        if key in summary:
            print(f"{key:<28} {summary[key]:.4f}")
    if "verification" in summary:
        v = summary["verification"]
        print(
            f"{'verification':<28} {v['verdict']} "
            f"(acc={v['accuracy']:.4f}, gamma={v['gamma']:.4f}, n_s={v['n_s']})"
        )
    if "non_ambiguity" in summary:
        na = summary["non_ambiguity"]
        status = "resisted" if na["resisted"] else "FORGED"
        print(
            f"{'ambiguity attack':<28} {status} "
            f"(best={na['best_forged_accuracy']:.4f} vs gamma={na['gamma']:.4f})"
        )
    if "attacks" in summary:
        print("-" * 56)
        print(f"{'attack':<10} {'param':<30} {'wm':>7} {'test':>7}  verdict")
        for r in summary["attacks"]:
            print(
                f"{r['attack']:<10} {r['param']:<30} {r['wm_acc']:>7.3f} "
                f"{r['test_acc']:>7.3f}  {r['verdict']}"
            )
    if "failed_stage" in summary:
        print(f"FAILED at stage {summary['failed_stage']}: {summary.get('error', '')}")
        return EXIT_STAGE
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(args, watermarked=False)
        if args.command == "embed":
            return cmd_train(args, watermarked=True)
        if args.command == "attack":
            return cmd_attack(args)
        if args.command == "verify":
            return cmd_verify(args)
        if args.command == "sweep":
            return cmd_sweep(args)
        if args.command == "report":
            return cmd_report(args)
        raise ConfigurationError(f"unknown command {args.command!r}")
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except FedmarkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
