"""Command-line surface: train, eval, serve, trace replay, corpus build."""

from __future__ import annotations

import argparse
import json
import sys

from .config import load_config, parse_override_arg
from .errors import SeqDesignError
from .presets import ablation_switches, apply_preset_overrides, preset_from_config
from .simulators import builtin_config, make_digits_corpus
from .traces import load_trace, replay_trace
from .training import bundle_from_checkpoint, run_eval, run_training

ABLATION_SHORTCUTS = ("nested_bptt", "fixed_length", "window")


def _load_doc(args):
    doc = builtin_config()
    if getattr(args, "config", None):
        user = load_config(args.config)
        doc = {**doc, **user}
    return doc


def _resolve_preset(args, doc):
    preset = preset_from_config(doc, args.preset)
    if args.override:
        overrides = dict(parse_override_arg(o) for o in args.override)
        ablations = {k: overrides.pop(k) for k in list(overrides)
                     if k in ABLATION_SHORTCUTS}
        if ablations:
            preset = ablation_switches(preset, ablations)
        if overrides:
            preset = apply_preset_overrides(preset, overrides)
    return preset


def cmd_train(args):
    doc = _load_doc(args)
    preset = _resolve_preset(args, doc)
    result = run_training(preset, args.out, scale=args.scale, doc=doc,
                          corpus_path=args.corpus, resume=args.resume)
    print(f"checkpoint: {result.checkpoint}")
    print(f"metrics:    {result.metrics_path}")
    if result.epoch_means:
        print(f"epoch mean loss: first {result.epoch_means[0]:.4f} "
              f"last {result.epoch_means[-1]:.4f}")
    return 0


def cmd_eval(args):
    doc = _load_doc(args)
    expected = preset_from_config(doc, args.preset) if args.preset else None
    horizons = [int(h) for h in args.horizons.split(",")] if args.horizons else None
    rows = run_eval(args.ckpt, args.metric, out_dir=args.out,
                    horizon=args.T, horizons=horizons,
                    contrastive_size=args.L, n_outer=args.L0,
                    samples_per_step=args.samples, sampler_steps=args.ode_steps,
                    max_images=args.max_images, seed=args.seed, doc=doc,
                    corpus_path=args.corpus, expected_preset=expected,
                    force=args.force)
    for row in rows:
        print(json.dumps(row))
    return 0


def cmd_serve(args):
    import uvicorn

    from .service import ServiceConfig, create_app

    config = ServiceConfig(checkpoints={"default": args.ckpt}, default="default",
                           posterior_ode_steps=args.ode_steps,
                           session_ttl=args.session_ttl, trace_dir=args.trace_dir,
                           corpus_path=args.corpus, static_dir=args.static_dir)
    app = create_app(config)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_trace_replay(args):
    trace = load_trace(args.file)
    ckpt = args.ckpt or trace.get("checkpoint")
    if not ckpt:
        print("trace carries no checkpoint reference; pass --ckpt", file=sys.stderr)
        return 2
    bundle, _ = bundle_from_checkpoint(ckpt, corpus_path=args.corpus)
    result = replay_trace(trace, bundle)
    if result["ok"]:
        print(f"replay ok: {len(trace['steps'])} steps reproduced byte-identically")
        return 0
    print(f"replay mismatch: {json.dumps(result['mismatches'])}", file=sys.stderr)
    return 1


def cmd_build_corpus(args):
    corpus = make_digits_corpus(args.out, size=args.size)
    print(f"wrote {args.out}: train {tuple(corpus.train.shape)} "
          f"val {tuple(corpus.val.shape)}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="seqdesign")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a preset")
    t.add_argument("--preset", required=True)
    t.add_argument("--scale", type=float, default=1.0)
    t.add_argument("--override", action="append", default=[],
                   metavar="K=V", help="preset override, repeatable")
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="extra presets config file")
    t.add_argument("--corpus", help="image corpus path (id experiments)")
    t.add_argument("--resume", help="checkpoint to resume from")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--metric", required=True, choices=["spce", "ssim-nrmse"])
    e.add_argument("--T", type=int, default=None)
    e.add_argument("--horizons", help="comma-separated evaluation horizons")
    e.add_argument("--L", type=int, default=10_000, help="contrastive samples")
    e.add_argument("--L0", type=int, default=500, help="outer rollouts")
    e.add_argument("--samples", type=int, default=8, help="posterior draws per step")
    e.add_argument("--ode-steps", type=int, default=None)
    e.add_argument("--max-images", type=int, default=64)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--preset", help="cross-check the checkpoint preset hash")
    e.add_argument("--force", action="store_true",
                   help="evaluate despite a preset hash mismatch")
    e.add_argument("--out", help="directory for the CSV table")
    e.add_argument("--config")
    e.add_argument("--corpus")
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("serve", help="run the rollout HTTP service")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--port", type=int, default=8000)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--ode-steps", type=int, default=256)
    s.add_argument("--session-ttl", type=float, default=None)
    s.add_argument("--trace-dir", default=None)
    s.add_argument("--static-dir", default=None,
                   help="directory with the built console bundle")
    s.add_argument("--corpus")
    s.set_defaults(fn=cmd_serve)

    tr = sub.add_parser("trace", help="trace utilities")
    trs = tr.add_subparsers(dest="trace_command", required=True)
    rp = trs.add_parser("replay", help="re-execute a stored trace and verify it")
    rp.add_argument("file")
    rp.add_argument("--ckpt", help="checkpoint (defaults to the trace's reference)")
    rp.add_argument("--corpus")
    rp.set_defaults(fn=cmd_trace_replay)

    c = sub.add_parser("build-corpus", help="build the desk digit corpus")
    c.add_argument("--out", required=True)
    c.add_argument("--size", type=int, default=14)
    c.set_defaults(fn=cmd_build_corpus)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SeqDesignError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
