"""Command-line entry point: synth, train, eval, infer, plot.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every command
writes one run manifest (``run_<command>.json``) next to its output.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .codec import DEFAULT_RHO, decode_doa
from .dataset import MANIFEST_NAME, SynthConfig, build_dataset, load_pool, read_manifest, resolve, toy_pool

logger = logging.getLogger("promptloc")

DATA_ENV = "PROMPTLOC_DATA_DIR"


class UsageError(Exception):
    pass


def _default_data_dir() -> Path:
    return Path(os.environ.get(DATA_ENV, "data"))


def _rel(p) -> str:
    p = Path(p)
    try:
        return os.path.relpath(p.resolve(), Path.cwd())
    except ValueError:  # different drive
        return str(p)


def _write_run_manifest(out_dir, command: str, config: dict, seed, inputs: dict, outputs: dict,
                        started: float) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"run_{command}.json"
    rec = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {k: _rel(v) for k, v in inputs.items() if v is not None},
        "outputs": {k: _rel(v) for k, v in outputs.items() if v is not None},
        "version": __version__,
        "wall_seconds": round(time.perf_counter() - started, 3),
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    path.write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")
    return path


def _manifest_path(arg) -> Path:
    p = Path(arg)
    if p.is_dir():
        p = p / MANIFEST_NAME
    if not p.exists():
        raise FileNotFoundError(f"manifest not found: {arg}")
    return p


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    started = time.perf_counter()
    if not args.toy and args.pool is None:
        raise UsageError("synth needs --toy or --pool DIR")
    out = Path(args.out) if args.out else _default_data_dir() / ("toy" if args.toy else "synth")
    if args.toy:
        pool = toy_pool(args.per_class, args.classes, args.duration, seed=args.seed)
    else:
        if not Path(args.pool).is_dir():
            raise FileNotFoundError(f"source pool directory not found: {args.pool}")
        pool, _ = load_pool(args.pool, args.duration)
    config = SynthConfig(n_records=args.n, snr_db=args.snr)
    records = build_dataset(config, args.seed, out, pool)
    print(f"wrote {len(records)} records to {out / MANIFEST_NAME}")
    _write_run_manifest(out, "synth", {**vars(config), "toy": args.toy, "classes": args.classes,
                                       "per_class": args.per_class, "duration": args.duration},
                        args.seed, {"pool": args.pool}, {"manifest": out / MANIFEST_NAME}, started)
    return 0


def cmd_train(args) -> int:
    from .training import TrainConfig, train

    started = time.perf_counter()
    manifest = _manifest_path(args.manifest)
    config = TrainConfig(steps=args.steps, batch_size=args.batch_size, learning_rate=args.lr,
                         sigma_theta=args.sigma, seed=args.seed, ablation_mode=args.ablation,
                         prompt_mode=args.prompt, eval_every=args.eval_every,
                         role_swap=not args.no_role_swap, mask_imag=args.mask_imag,
                         preset=args.preset)
    out = Path(args.out)
    torch.set_num_threads(args.threads)

    def progress(rec):
        if "eval_acc" in rec:
            logger.info("step %d  loss %.4f  train MAE %.2f  ACC %.1f", rec["step"],
                        rec["eval_loss_joint"], rec["eval_mae"], rec["eval_acc"])

    res = train(config, manifest, out, progress=progress)
    last = res.history[-1]
    print(f"step {last['step']}: MAE {last['eval_mae']:.2f} deg, ACC {last['eval_acc']:.2f} % "
          f"(best {res.best_acc:.2f} % at step {res.best_step}); {res.seconds:.0f} s")
    _write_run_manifest(out, "train", config.to_dict(), config.seed, {"manifest": manifest},
                        {"best": res.checkpoint, "last": out / "last.npz",
                         "metrics": out / "metrics.jsonl"}, started)
    return 0


def _roles(arg: str):
    return ("target", "interferer") if arg == "both" else (arg,)


def cmd_eval(args) -> int:
    from .training import evaluate

    started = time.perf_counter()
    missing = [p for p in (args.checkpoint, args.manifest) if not Path(p).exists()]
    if missing:
        raise FileNotFoundError("missing inputs: " + ", ".join(missing))
    manifest = _manifest_path(args.manifest)
    rep = evaluate(args.checkpoint, manifest, rho=args.rho, roles=_roles(args.role),
                   prompt_mode=args.prompt)
    summary = {k: rep[k] for k in ("n", "mae_deg", "acc_pct", "rho")}
    print(json.dumps(summary, sort_keys=True))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(rep, indent=1, sort_keys=True) + "\n")
    _write_run_manifest(out.parent, "eval", {"rho": args.rho, "role": args.role, "prompt": args.prompt},
                        None, {"checkpoint": args.checkpoint, "manifest": manifest}, {"report": out},
                        started)
    return 0


def cmd_infer(args) -> int:
    from .audio import MonoClip, load_stereo
    from .encoders import PromptRef, encode_audio_semantic, encode_image_semantic
    from .features import stft
    from .training import load_checkpoint

    started = time.perf_counter()
    truth = {"target_azimuth": args.target_azimuth, "interferer_azimuth": args.interferer_azimuth}
    if args.manifest is not None:
        if args.record is None:
            raise UsageError("--manifest needs --record")
        manifest = _manifest_path(args.manifest)
        recs = {r["id"]: r for r in read_manifest(manifest)}
        if args.record not in recs:
            raise ValueError(f"record {args.record} not in {manifest}")
        rec = recs[args.record]
        mixture = resolve(manifest, rec, "mixture")
        key = "prompt" if args.role == "target" else "interferer_prompt"
        prompt = PromptRef.from_dict(rec[key])
        if args.role == "target":
            truth = {"target_azimuth": rec["target_azimuth"], "interferer_azimuth": rec["interferer_azimuth"]}
        else:
            truth = {"target_azimuth": rec["interferer_azimuth"], "interferer_azimuth": rec["target_azimuth"]}
    else:
        if args.mixture is None or args.prompt_ref is None:
            raise UsageError("infer needs --mixture and --prompt-ref, or --manifest and --record")
        mixture = Path(args.mixture)
        cat, sep, inst = args.prompt_ref.partition(":")
        if not sep or not cat.isdigit():
            raise UsageError("--prompt-ref must look like CATEGORY:INSTANCE, e.g. 0:0-3")
        prompt = PromptRef(int(cat), inst)
    missing = [str(p) for p in (args.checkpoint, mixture) if not Path(p).exists()]
    if missing:
        raise FileNotFoundError("missing inputs: " + ", ".join(missing))

    model, _ = load_checkpoint(args.checkpoint)
    if args.prompt is not None:
        model.cfg.prompt_mode = args.prompt
    mix = load_stereo(mixture)
    spec = stft(mix)
    fa = encode_audio_semantic(MonoClip(mix.samples.mean(axis=0), mix.sample_rate)).values
    fv = encode_image_semantic(prompt)

    def t(x):
        return torch.as_tensor(np.asarray(x)[None], dtype=torch.float32)

    with torch.no_grad():
        out = model(t(spec.real), t(spec.imag), t(fv), t(fa))
    post = out["posterior"][0].double().numpy()
    decoded = decode_doa(post)
    print(decoded)
    dump = {"decoded": decoded, "posterior": post.tolist(), "prompt": prompt.to_dict(),
            "mixture": _rel(mixture), **truth}
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(dump) + "\n")
    _write_run_manifest(out_path.parent, "infer", {"prompt": prompt.key, "prompt_mode": args.prompt},
                        None, {"checkpoint": args.checkpoint, "mixture": mixture}, {"posterior": out_path},
                        started)
    return 0


def cmd_plot(args) -> int:
    from .plotting import plot_dump

    started = time.perf_counter()
    if not Path(args.dump).exists():
        raise FileNotFoundError(f"missing inputs: {args.dump}")
    out = plot_dump(args.dump, args.out, args.sigma)
    print(f"wrote {out}")
    _write_run_manifest(Path(args.out).parent, "plot", {"sigma": args.sigma}, None,
                        {"dump": args.dump}, {"image": out}, started)
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="promptloc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="synthesize a two-source mixture dataset")
    s.add_argument("--toy", action="store_true", help="use the built-in band-limited toy corpus")
    s.add_argument("--pool", help="directory of <category>/<instance>.wav source clips")
    s.add_argument("--n", type=int, default=32, help="number of mixtures")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--snr", type=float, default=0.0, help="target-to-interferer ratio in dB")
    s.add_argument("--classes", type=int, default=2, help="toy categories to use")
    s.add_argument("--per-class", type=int, default=10, help="toy instances per category")
    s.add_argument("--duration", type=float, default=0.5, help="clip length in seconds")
    s.add_argument("--out", help=f"output directory (default ${DATA_ENV}/toy or data/toy)")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a localizer on a manifest")
    t.add_argument("--manifest", required=True, help="manifest file or dataset directory")
    t.add_argument("--steps", type=int, default=2000)
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--lr", type=float, default=5e-3)
    t.add_argument("--sigma", type=float, default=8.0, help="label width in degrees")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--ablation", choices=("matching", "concat", "film"), default="matching")
    t.add_argument("--prompt", choices=("av", "v_only", "a_only", "none"), default="av")
    t.add_argument("--preset", choices=("desk", "full"), default="desk",
                   help="desk: small widths for CPU runs; full: reference widths")
    t.add_argument("--eval-every", type=int, default=250)
    t.add_argument("--mask-imag", action="store_true", help="also mask the imaginary part")
    t.add_argument("--no-role-swap", action="store_true",
                   help="train on the recorded target only (no second example per mixture)")
    t.add_argument("--threads", type=int, default=1)
    t.add_argument("--out", default="runs/train")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="MAE / ACC of a checkpoint on a manifest")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--rho", type=float, default=DEFAULT_RHO)
    e.add_argument("--role", choices=("target", "interferer", "both"), default="target",
                   help="which source of each mixture is prompted")
    e.add_argument("--prompt", choices=("av", "v_only", "a_only", "none"), default=None,
                   help="override the checkpoint's prompt mode")
    e.add_argument("--out", default="eval_report.json")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="DoA posterior for one mixture and prompt")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--mixture", help="stereo 16-bit WAV")
    i.add_argument("--prompt-ref", help="prompt image reference CATEGORY:INSTANCE")
    i.add_argument("--manifest", help="take mixture and prompt from a manifest record instead")
    i.add_argument("--record", type=int)
    i.add_argument("--role", choices=("target", "interferer"), default="target")
    i.add_argument("--target-azimuth", type=int)
    i.add_argument("--interferer-azimuth", type=int)
    i.add_argument("--prompt", choices=("av", "v_only", "a_only", "none"), default=None)
    i.add_argument("--out", default="posterior.json")
    i.set_defaults(func=cmd_infer)

    pl = sub.add_parser("plot", help="plot a posterior dump against its ground truth")
    pl.add_argument("--dump", required=True, help="posterior JSON written by infer")
    pl.add_argument("--sigma", type=float, default=8.0)
    pl.add_argument("--out", default="posterior.png")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: report, nonzero exit
        if args.verbose:
            logger.exception("command failed")
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
