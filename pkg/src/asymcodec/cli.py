"""Command-line front end: ``python -m asymcodec <verb> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .codec import Bitstream, compress, decompress
from .config import PROFILES, VARIANTS, ModelConfig, preset
from .errors import CodecError, FormatError, UsageError
from .evaluation import eval_curve
from .imageio import read_image, write_image
from .metrics import RDCurve, bd_rate
from .model import Model
from .profiler import SIDES, profile_model
from .training import (
    LAMBDAS,
    S0,
    S1,
    S2,
    StagePlan,
    TrainConfig,
    assemble_asymmetric,
    lambda_index,
    load_dataset,
    mark_ancestor,
    run_stage,
)


def load_config(spec: str) -> ModelConfig:
    """A JSON file path, or ``variant[:profile]`` naming a built-in preset."""
    path = Path(spec)
    if path.suffix == ".json" or path.exists():
        try:
            return ModelConfig.load(path)
        except OSError as exc:
            raise UsageError(f"cannot read config {spec}: {exc.strerror}") from exc
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"{spec} is not a valid model config: {exc}") from exc
    variant, _, profile = spec.partition(":")
    if variant not in VARIANTS or (profile and profile not in PROFILES):
        raise UsageError(f"{spec!r} is neither a config file nor one of {VARIANTS} (optionally ':{'|'.join(PROFILES)}')")
    return preset(variant, profile or "micro")


def parse_resolution(text: str) -> tuple[int, int]:
    """``WxH`` to ``(h, w)``."""
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"resolution must look like 768x512, got {text!r}") from None
    return h, w


def load_model(path: str) -> Model:
    if not Path(path).exists():
        raise UsageError(f"checkpoint {path} does not exist")
    try:
        return Model.load(path)
    except OSError as exc:
        raise UsageError(f"cannot read checkpoint {path}: {exc.strerror}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path} metadata is malformed: {exc}") from exc


def _cmd_compress(args) -> int:
    model = load_model(args.model)
    stream = compress(read_image(args.input), model, args.model_id)
    Path(args.output).write_bytes(stream.to_bytes())
    print(f"{args.output}: {len(stream)} bytes, {stream.bpp():.4f} bpp")
    return 0


def _cmd_decompress(args) -> int:
    model = load_model(args.model)
    try:
        data = Path(args.input).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {args.input}: {exc.strerror}") from exc
    write_image(args.output, decompress(Bitstream.from_bytes(data), model, args.model_id))
    return 0


def _cmd_eval(args) -> int:
    models = [load_model(p) for p in args.model]
    if len(models) == 1:
        from .evaluation import eval_dataset

        reports = [eval_dataset(models[0], args.data)]
        curve = None
    else:
        curve, reports = eval_curve(models, args.data)
    if args.format == "json":
        print(json.dumps([r.to_dict() for r in reports], indent=2))
    else:
        for path, rep in zip(args.model, reports):
            print(f"# {path}")
            print(f"{'image':<32}{'bytes':>8}{'bpp':>10}{'psnr':>9}")
            for r in rep.records:
                print(f"{r.name:<32}{r.bytes:>8}{r.bpp:>10.4f}{min(r.psnr, 99.0):>9.3f}")
            print(f"{'mean':<32}{rep.total_bytes:>8}{rep.mean_bpp:>10.4f}{rep.mean_psnr:>9.3f}")
    if args.curve:
        (curve or RDCurve([reports[0].point()])).write_csv(args.curve)
    return 0


def _cmd_bdrate(args) -> int:
    value = bd_rate(RDCurve.read_csv(args.anchor), RDCurve.read_csv(args.test))
    print(f"{value:.4f}")
    return 0


def _cmd_profile(args) -> int:
    h, w = parse_resolution(args.resolution)
    report = profile_model(load_config(args.config), h, w, args.side)
    print(report.to_json() if args.format == "records" else report.table())
    return 0


def _stage_name(paths: Path, stage: str) -> Path:
    return paths.with_name(f"{paths.stem}_{stage}{paths.suffix}")


def _cmd_train(args) -> int:
    steps = {}
    for stage, value in ((S0, args.s0_steps), (S1, args.s1_steps), (S2, args.s2_steps)):
        if value is not None:
            steps[stage] = value
    cfg = TrainConfig(lmbda=args.lmbda, batch_size=args.batch_size, crop=args.crop, seed=args.seed,
                      allow_custom_lambda=args.custom_lambda)
    cfg.steps.update(steps)
    data = load_dataset(args.data)
    config = load_config(args.config)
    out = Path(args.out)
    metrics = open(args.metrics, "a") if args.metrics else None

    def emit(rec: dict) -> None:
        line = json.dumps(rec)
        print(line, flush=True)
        if metrics:
            metrics.write(line + "\n")
            metrics.flush()

    def stamp(model: Model, stage: str) -> Model:
        model.info.update({"lambda": cfg.lmbda, "lambda_index": lambda_index(cfg.lmbda), "stage": stage})
        return model

    try:
        if args.stage == "s0":
            model = Model(config, cfg.seed)
            run_stage(model, StagePlan.for_stage(S0), data, cfg, on_record=emit)
            mark_ancestor(model)
            stamp(model, S0).save(out)
        elif args.stage in ("s1", "s2"):
            if not args.init:
                raise UsageError(f"--stage {args.stage} needs --init pointing at an S0 checkpoint")
            model = load_model(args.init)
            if model.lineage is None:
                mark_ancestor(model)
            stage = S1 if args.stage == "s1" else S2
            run_stage(model, StagePlan.for_stage(stage), data, cfg, target=config, on_record=emit)
            stamp(model, stage).save(out)
        elif args.stage == "assemble":
            if not (args.s1 and args.s2):
                raise UsageError("--stage assemble needs --s1 and --s2 checkpoints")
            stamp(assemble_asymmetric(load_model(args.s1), load_model(args.s2)), "S3_assemble").save(out)
        else:
            target = load_config(args.target) if args.target else preset("AsymOurs", config.scale_profile)
            s0 = Model(config, cfg.seed)
            run_stage(s0, StagePlan.for_stage(S0), data, cfg, on_record=emit)
            mark_ancestor(s0)
            stamp(s0, S0).save(_stage_name(out, "s0"))
            s1, s2 = s0.copy(), s0.copy()
            run_stage(s1, StagePlan.for_stage(S1), data, cfg, target=target, on_record=emit)
            stamp(s1, S1).save(_stage_name(out, "s1"))
            run_stage(s2, StagePlan.for_stage(S2), data, cfg, target=target, on_record=emit)
            stamp(s2, S2).save(_stage_name(out, "s2"))
            stamp(assemble_asymmetric(s1, s2), "S3_assemble").save(out)
    finally:
        if metrics:
            metrics.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asymcodec", description="Asymmetric learned image codec")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", help="encode an image to an ALIC stream")
    p.add_argument("input")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--model-id", type=int, default=None)
    p.set_defaults(func=_cmd_compress)

    p = sub.add_parser("decompress", help="decode an ALIC stream to PNG or PPM")
    p.add_argument("input")
    p.add_argument("--model", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--model-id", type=int, default=None, help="reject streams made with another model id")
    p.set_defaults(func=_cmd_decompress)

    p = sub.add_parser("eval", help="bpp and PSNR over a directory of images")
    p.add_argument("--model", required=True, action="append", help="checkpoint; repeat for an RD curve")
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.add_argument("--curve", help="write the mean points as bpp,psnr CSV")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bdrate", help="Bjontegaard delta rate between two bpp,psnr curves")
    p.add_argument("--anchor", required=True)
    p.add_argument("--test", required=True)
    p.set_defaults(func=_cmd_bdrate)

    p = sub.add_parser("profile", help="static MACs and parameter counts")
    p.add_argument("--config", required=True, help="config JSON or a preset such as AsymOurs:paper-replica")
    p.add_argument("--resolution", default="768x512")
    p.add_argument("--side", choices=sorted(SIDES), default="decoder")
    p.add_argument("--format", choices=("table", "records"), default="table")
    p.set_defaults(func=_cmd_profile)

    p = sub.add_parser("train", help="run training stages")
    p.add_argument("--config", required=True, help="starting config for s0/all, target config for s1/s2")
    p.add_argument("--stage", choices=("s0", "s1", "s2", "assemble", "all"), default="all")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--init", help="S0 checkpoint for --stage s1/s2")
    p.add_argument("--s1", help="S1 checkpoint for --stage assemble")
    p.add_argument("--s2", help="S2 checkpoint for --stage assemble")
    p.add_argument("--target", help="asymmetric target config for --stage all")
    p.add_argument("--lambda", dest="lmbda", type=float, default=0.0130, help=f"one of {LAMBDAS}")
    p.add_argument("--custom-lambda", action="store_true", help="allow a lambda outside the standard set")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--crop", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--s0-steps", type=int)
    p.add_argument("--s1-steps", type=int)
    p.add_argument("--s2-steps", type=int)
    p.add_argument("--metrics", help="append newline-delimited JSON records here")
    p.set_defaults(func=_cmd_train)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CodecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
