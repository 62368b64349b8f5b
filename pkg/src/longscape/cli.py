"""Command line: ``longscape {train,generate,eval,inspect-checkpoint}``.

Run settings come from built-in defaults, then an optional ``key = value``
file (``--config``), then per-key flags, in increasing priority.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from contextlib import nullcontext
from pathlib import Path
from typing import Optional, Sequence


from . import checkpoint as ckpt_io
from .config import GeneratorConfig, LossWeights, TrainSchedule
from .data import DatasetIndex, ImageError, augment_test, load_image, save_image
from .evaluation import PROXY_LABEL, evaluate, seam_report
from .generator import ShapeError, generate_multistep
from .training import TrainState

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_INTERRUPTED = 0, 1, 2, 130


@dataclasses.dataclass(frozen=True)
class Key:
    name: str
    kind: type
    default: object
    help: str
    reference: bool = False  # value taken from the original method's training setup
    group: str = "run"


def _keys() -> list[Key]:
    sched, w = TrainSchedule(), LossWeights()
    gen = GeneratorConfig()
    return [
        Key("seed", int, 0, "seed for initialization, data order, augmentation and penalty draws"),
        Key("scale", float, 1.0, "width/resolution multiplier; 0.5 gives 64px tiles and half the channels"),
        Key("max_steps", int, 0, "stop after this many generator steps in total (0 = run the whole schedule)"),
        Key("checkpoint_every", int, 500, "write checkpoint.lsc every N generator steps (0 = only at exit)"),
        Key("base_lr", float, sched.base_lr, "Adam learning rate before the drop", True, "schedule"),
        Key("beta1", float, sched.beta1, "Adam first-moment decay", True, "schedule"),
        Key("beta2", float, sched.beta2, "Adam second-moment decay", True, "schedule"),
        Key("adam_eps", float, sched.adam_eps, "Adam denominator epsilon", False, "schedule"),
        Key("batch_size", int, sched.batch_size, "images per batch", True, "schedule"),
        Key("warmup_iters", int, sched.warmup_iters, "generator steps on reconstruction loss alone", True, "schedule"),
        Key("epochs", int, sched.epochs, "passes over the training split", True, "schedule"),
        Key("lr_drop_epoch", int, sched.lr_drop_epoch, "epoch at which the learning rate drops", True, "schedule"),
        Key("lr_drop_factor", float, sched.lr_drop_factor, "divisor applied to the learning rate at the drop", True, "schedule"),
        Key("n_cir_high", int, sched.n_cir_high, "critic updates per generator step early on and periodically", True, "schedule"),
        Key("n_cir_low", int, sched.n_cir_low, "critic updates per generator step otherwise", True, "schedule"),
        Key("n_cir_threshold", int, sched.n_cir_threshold, "iterations below this use n_cir_high", True, "schedule"),
        Key("n_cir_period", int, sched.n_cir_period, "every multiple of this iteration uses n_cir_high", True, "schedule"),
        Key("lambda_rec", float, w.lambda_rec, "weight of the masked reconstruction loss", True, "weights"),
        Key("lambda_adv", float, w.lambda_adv, "weight of the adversarial loss", True, "weights"),
        Key("lambda_gp", float, w.lambda_gp, "gradient penalty coefficient", True, "weights"),
        Key("beta", float, w.beta, "global critic share of the critic mix (local gets 1 - beta)", True, "weights"),
        Key("input_size", int, None, f"tile size S (default {gen.input_size} x scale)", True, "generator"),
        Key("channels", tuple, None, f"five stage widths (default {_csv(gen.channels)} x scale)", True, "generator"),
        Key("encoder_blocks", tuple, None, f"residual blocks per encoder stage (default {_csv(gen.encoder_blocks)})", True, "generator"),
        Key("decoder_blocks", tuple, None, f"residual blocks per decoder stage (default {_csv(gen.decoder_blocks)})", True, "generator"),
        Key("rct_pred_len", int, None, f"predicted latent columns (default {gen.rct_pred_len} x scale)", True, "generator"),
        Key("grb_dilations", tuple, None, f"horizontal dilation of each global residual block (default {_csv(gen.grb_dilations)})", True, "generator"),
    ]


def _csv(t) -> str:
    return ",".join(str(v) for v in t)


KEYS = {k.name: k for k in _keys()}


class UsageError(ValueError):
    pass


def _convert(key: Key, raw: str):
    if raw.strip() == "auto" and key.default is None:
        return None
    try:
        if key.kind is tuple:
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if key.kind is int:
            return int(raw)
        return float(raw)
    except ValueError:
        raise UsageError(f"bad value for {key.name}: {raw!r}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        k, v = (part.strip() for part in line.split("=", 1))
        if k not in KEYS:
            raise UsageError(f"{source}:{lineno}: unknown config key {k!r}")
        out[k] = _convert(KEYS[k], v)
    return out


@dataclasses.dataclass(frozen=True)
class RunConfig:
    values: dict

    @classmethod
    def resolve(cls, file_values: Optional[dict] = None, overrides: Optional[dict] = None) -> "RunConfig":
        vals = {k.name: k.default for k in KEYS.values()}
        vals.update({k: v for k, v in (file_values or {}).items() if v is not None})
        vals.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls(vals)

    def _group(self, group: str) -> dict:
        return {k.name: self.values[k.name] for k in KEYS.values() if k.group == group and self.values[k.name] is not None}

    def generator(self) -> GeneratorConfig:
        return dataclasses.replace(GeneratorConfig.scaled(self.values["scale"]), **self._group("generator"))

    def schedule(self) -> TrainSchedule:
        return TrainSchedule(**self._group("schedule"))

    def weights(self) -> LossWeights:
        return LossWeights(**self._group("weights"))

    def dump(self) -> str:
        lines = []
        for k in KEYS.values():
            v = self.values[k.name]
            text = "auto" if v is None else _csv(v) if isinstance(v, tuple) else repr(v)
            lines.append(f"{k.name} = {text}")
        return "\n".join(lines) + "\n"


# -- parser ------------------------------------------------------------------------------------


def _add_key_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run settings (also accepted as 'key = value' lines in --config)")
    for k in KEYS.values():
        default = "auto" if k.default is None else k.default
        note = "; reference setting" if k.reference else ""
        g.add_argument(f"--{k.name.replace('_', '-')}", dest=k.name, default=None, metavar=k.kind.__name__.upper(),
                       type=(lambda raw, key=k: _convert(key, raw)),
                       help=f"{k.help} (default: {default}{note})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="longscape", description="Horizontal image outpainting with recurrent content transfer.")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a generator and its critics")
    t.add_argument("--config", type=Path, help="file of 'key = value' lines, '#' starts a comment")
    t.add_argument("--data", type=Path, help="dataset root holding train/*.png (and optionally test/*.png)")
    t.add_argument("--out", type=Path, help="run directory for checkpoint.lsc, metrics.log and samples/")
    t.add_argument("--resume", type=Path, help="checkpoint to continue from")
    t.add_argument("--force", action="store_true", help="resume even if the checkpoint's config fingerprint differs")
    t.add_argument("--print-config", action="store_true", help="print the resolved settings and exit")
    _add_key_flags(t)

    g = sub.add_parser("generate", help="extend an image to the right and/or left")
    g.add_argument("checkpoint", type=Path)
    g.add_argument("input", type=Path, help="PNG; resized to a square tile")
    g.add_argument("--out", type=Path, required=True, help="output PNG; a .seams.json report is written beside it")
    g.add_argument("--steps-right", type=int, default=1, help="tiles to add on the right (default: 1)")
    g.add_argument("--steps-left", type=int, default=0, help="tiles to add on the left (default: 0)")

    e = sub.add_parser("eval", help=f"proxy metrics on the test split ({PROXY_LABEL})")
    e.add_argument("checkpoint", type=Path)
    e.add_argument("--data", type=Path, required=True, help="dataset root holding test/*.png")
    e.add_argument("--out", type=Path, help="also write the JSON report here")

    i = sub.add_parser("inspect-checkpoint", help="print a checkpoint's header and contents")
    i.add_argument("checkpoint", type=Path)
    return parser


# -- commands -----------------------------------------------------------------------------------


def cmd_train(args) -> int:
    from .trainer import run_training

    file_values = parse_config_text(args.config.read_text(encoding="utf-8"), str(args.config)) if args.config else {}
    rc = RunConfig.resolve(file_values, {k: getattr(args, k) for k in KEYS})
    if args.print_config:
        sys.stdout.write(rc.dump())
        return EXIT_OK
    if args.data is None or args.out is None:
        raise UsageError("train needs --data and --out")
    gen_cfg, schedule, weights = rc.generator(), rc.schedule(), rc.weights()
    seed = rc.values["seed"]
    train_index = DatasetIndex.scan(args.data, "train")
    try:
        sample_index = DatasetIndex.scan(args.data, "test")
    except ImageError:
        sample_index = train_index
    start_batch = 0
    if args.resume:
        expected = TrainState(gen_cfg, schedule, weights, None, None, seed).fingerprint
        state = ckpt_io.load(args.resume, expected_fingerprint=expected, force=args.force)
        start_batch = ckpt_io.extra_values(args.resume).get("batch", 0)
        print(f"resuming at step {state.step}, epoch {state.epoch}, batch {start_batch}", file=sys.stderr)
    else:
        state = TrainState.create(gen_cfg, schedule, weights, seed=seed)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "config.txt").write_text(rc.dump(), encoding="utf-8")
    outcome = run_training(state, train_index, args.out, sample_index=sample_index,
                           max_steps=rc.values["max_steps"], checkpoint_every=rc.values["checkpoint_every"],
                           start_batch=start_batch)
    print(f"{outcome.reason} at step {outcome.state.step}; checkpoint {outcome.checkpoint}", file=sys.stderr)
    return EXIT_INTERRUPTED if outcome.reason == "interrupted" else EXIT_OK


def cmd_generate(args) -> int:
    if args.steps_right < 0 or args.steps_left < 0:
        raise UsageError("--steps-right and --steps-left must be >= 0")
    state = ckpt_io.load(args.checkpoint)
    s = state.gen_cfg.input_size
    tile = augment_test(load_image(args.input), (s, s))
    pano = generate_multistep(tile, state.generator, state.gen_cfg, args.steps_right, args.steps_left)
    save_image(pano, args.out)
    report = {"width": pano.shape[2], "height": pano.shape[1], "seams": seam_report(pano, s)}
    args.out.with_suffix(".seams.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {args.out} ({pano.shape[2]}x{pano.shape[1]})", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    state = ckpt_io.load(args.checkpoint)
    s = state.gen_cfg.input_size
    index = DatasetIndex.scan(args.data, "test")
    images = (augment_test(load_image(p), (s, 2 * s)) for p in index.files)
    report = evaluate(images, state.generator, state.gen_cfg)
    text = json.dumps(report, indent=2, ensure_ascii=False) + "\n"
    sys.stdout.write(text)
    if args.out:
        args.out.write_text(text, encoding="utf-8")
    return EXIT_OK


def cmd_inspect(args) -> int:
    ck = ckpt_io.read_checkpoint(args.checkpoint)
    params = {k: v for k, v in ck.entries.items() if "/" in k and k.split("/", 1)[0] in ("gen", "critic")}
    info = {
        "version": ck.version,
        "fingerprint": ck.fingerprint,
        "step": ck.step,
        "epoch": ck.epoch,
        "config": ck.config,
        "entries": len(ck.entries),
        "generator_params": int(sum(v.size for k, v in params.items() if k.startswith("gen/"))),
        "critic_params": int(sum(v.size for k, v in params.items() if k.startswith("critic/"))),
        "extra": ckpt_io.extra_values(ck),
    }
    sys.stdout.write(json.dumps(info, indent=2) + "\n")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "generate": cmd_generate, "eval": cmd_eval, "inspect-checkpoint": cmd_inspect}


def _thread_limit():
    raw = os.environ.get("LONGSCAPE_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"LONGSCAPE_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("LONGSCAPE_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with _thread_limit():
            return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.error(str(exc))
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_INTERRUPTED
    except (ckpt_io.CheckpointError, ImageError, ShapeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
