"""Command line entry point: ``guicoder <subcommand>``.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error,
3 verification failure (gradcheck).
"""
import argparse
import dataclasses
import os
import sys

import numpy as np

from . import config as config_mod
from . import dsl, gradcheck, metrics, model, nn, synth, train
from .render import PpmFormatError, TooSmall, export_html, read_ppm, render, write_ppm


class CliError(Exception):
    pass


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


def _read_code(path):
    with open(path, encoding="utf-8") as f:
        return dsl.tokenize(f.read())


def _config(args, **overrides):
    return config_mod.load_config(getattr(args, "config", None), **overrides)


def _load_model(path, **overrides):
    try:
        params, extra = nn.read_weights(path)
    except OSError as exc:
        raise CliError(f"cannot read weights: {exc}") from exc
    keys = {k[len("__cfg."):]: v for k, v in extra.items() if k.startswith("__cfg.")}
    kw = {}
    for k in ("max_blocks", "max_tokens", "image_size"):
        if k in keys:
            kw[k] = int(keys[k])
    if "dropout" in keys:
        kw["dropout"] = keys["dropout"]
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return params, model.config_from_params(params, **kw)


def _cfg_extra(mcfg):
    return {f"__cfg.{k}": getattr(mcfg, k) for k in ("max_blocks", "max_tokens", "image_size", "dropout")}


def cmd_gen_data(args):
    cfg = _config(args, seed=args.seed)
    manifest = synth.build_dataset(args.train, args.test, cfg.gen, args.out, threads=cfg.threads)
    print(f"wrote {len(manifest.entries)} pairs to {args.out} "
          f"(train={manifest.n_train} test={manifest.n_test} image_size={cfg.gen.image_size} "
          f"seed={cfg.gen.seed})")


def _load_split(data_dir, split):
    try:
        manifest = synth.read_manifest(data_dir)
        return manifest, synth.load_split(manifest, split)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot load data from {data_dir}: {exc}") from exc


def cmd_train(args):
    cfg = _config(args, epochs=args.epochs, steps=args.steps, seed=args.seed)
    manifest, examples = _load_split(args.data, "train")
    if not examples:
        raise CliError("EmptyInput: training split is empty")
    size = examples[0][1].shape[-1]
    mcfg = dataclasses.replace(cfg.model, image_size=size)
    params = None
    if args.resume:
        params, _ = _load_model(args.resume)
    log_path = args.log or args.out + ".log"
    mode = "a" if args.resume else "w"
    with open(log_path, mode, encoding="utf-8", newline="\n") as log_file:
        if not args.resume:
            log_file.write(f"# clip_norm={cfg.train.clip_norm} seed={cfg.train.seed}\n")

        def log(line):
            log_file.write(line + "\n")

        params = train.train(examples, mcfg, cfg.train, params=params, log=log)
    nn.save_weights(args.out, params, _cfg_extra(mcfg))
    print(f"trained {params.t} steps; weights written to {args.out}; log {log_path}")


def cmd_predict(args):
    params, mcfg = _load_model(args.weights)
    try:
        img = read_ppm(args.image)
    except OSError as exc:
        raise CliError(f"cannot read image: {exc}") from exc
    image = synth.image_tensor(img)
    res = model.predict(image, params, mcfg, args.beam)
    program = res.program()
    print(dsl.serialize(program))
    if any(res.truncated):
        print("warning: block truncated at max_tokens", file=sys.stderr)
    if args.dump_attn:
        metrics.dump_attention(res, args.dump_attn)
    if args.html:
        with open(args.html, "w", encoding="utf-8", newline="\n") as f:
            f.write(export_html(program))


def cmd_eval(args):
    params, mcfg = _load_model(args.weights)
    _, examples = _load_split(args.data, args.split)
    if not examples:
        raise CliError(f"EmptyInput: {args.split} split is empty")
    strategy = "greedy" if args.beam is None else f"beam-{args.beam}"
    report = metrics.evaluate(params, examples, mcfg, args.beam,
                              {"split": args.split, "strategy": strategy})
    out = args.out or os.path.join(args.data, "eval.txt")
    report.write(out)
    print(f"token_error={report.token_error:.6f}\tA_bp={report.block_accuracy:.6f}")


def cmd_render(args):
    cfg = _config(args)
    size = args.size or cfg["image_size"]
    ast = dsl.parse(_read_code(args.code))
    write_ppm(args.out, render(ast, size, size))


def cmd_blockify(args):
    for block in dsl.blockify(_read_code(args.code)):
        print(dsl.detokenize(block))


def cmd_gradcheck(args):
    failed = []
    for res in gradcheck.run_all(args.seed):
        status = "ok" if res.ok else "FAIL"
        print(f"{res.name}\trel_error={res.rel_error:.3e}\ttol={res.tol:g}\t{status}")
        if not res.ok:
            failed.append(res.name)
    if failed:
        print(f"gradient check failed: {', '.join(failed)}", file=sys.stderr)
        return 3
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="guicoder", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("gen-data", help="build a synthetic (image, code) dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--train", type=int, required=True)
    s.add_argument("--test", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--epochs", type=int)
    s.add_argument("--steps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--resume")
    s.add_argument("--log")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="generate DSL code for a screenshot")
    s.add_argument("--weights", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--beam", type=int)
    s.add_argument("--dump-attn")
    s.add_argument("--html")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("eval", help="token error and block partitioning accuracy")
    s.add_argument("--weights", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--beam", type=int)
    s.add_argument("--split", default="test", choices=("train", "test"))
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("render", help="rasterize a .gui program to PPM")
    s.add_argument("--code", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--size", type=int)
    s.add_argument("--config")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("blockify", help="print a program's blocks, one per line")
    s.add_argument("--code", required=True)
    s.set_defaults(func=cmd_blockify)

    s = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "beam", None) is not None and args.beam < 1:
        build_parser().error("--beam must be >= 1")
    try:
        return args.func(args) or 0
    except nn.CorruptWeights as exc:
        _err(str(exc))
    except (CliError, OSError, dsl.DslError, PpmFormatError, TooSmall,
            config_mod.ConfigError, nn.EmptyInput, nn.ShapeMismatch, ValueError) as exc:
        _err(str(exc))
    return 1


if __name__ == "__main__":
    sys.exit(main())
