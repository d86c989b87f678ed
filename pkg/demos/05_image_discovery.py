"""Desk-scale image discovery: train, then per-step posterior quality curves.

Trains the id-desk preset (14x14 digits, horizon 4, reduced channels) and
prints the validation SSIM/NRMSE per measurement step for the learned policy
next to the random baseline.  About 15 minutes on one CPU core at full desk
scale; pass --scale 0.25 for a quicker (noisier) look.

Run:  python3 demos/05_image_discovery.py [--scale 0.25] [--flow]
"""

import argparse

from seqdesign.presets import preset_from_config
from seqdesign.simulators import builtin_config, make_digits_corpus
from seqdesign.training import run_eval, run_training

parser = argparse.ArgumentParser()
parser.add_argument("--scale", type=float, default=1.0)
parser.add_argument("--flow", action="store_true",
                    help="use the flow-matching backend instead of diffusion")
parser.add_argument("--out", default="/tmp/seqdesign-id-desk")
args = parser.parse_args()

corpus_path = "/tmp/seqdesign-demo-digits.npz"
make_digits_corpus(corpus_path, size=14)

key = "id-desk-fm" if args.flow else "id-desk"
preset = preset_from_config(builtin_config(), key)
print(f"training {key} ({preset.posterior_kind} posterior) at scale {args.scale}")
result = run_training(preset, args.out, scale=args.scale,
                      corpus_path=corpus_path, log_every=200)
print(f"loss: first epoch {result.epoch_means[0]:.2f} -> "
      f"last epoch {result.epoch_means[-1]:.2f}\n")

rows = run_eval(result.checkpoint, "ssim-nrmse", corpus_path=corpus_path,
                samples_per_step=4, sampler_steps=100, max_images=48,
                seed=0, quiet=True)
print("validation posterior quality per measurement step "
      "(mean over 48 images x 4 samples):")
print(f"  {'policy':8s} {'step':>4s} {'SSIM':>8s} {'NRMSE':>8s}")
by_key = {(r["policy"], r["metric"], r["horizon"]): r["mean"] for r in rows}
for policy in ("learned", "random"):
    for step in range(1, preset.horizon + 1):
        print(f"  {policy:8s} {step:4d} {by_key[(policy, 'ssim', step)]:8.3f} "
              f"{by_key[(policy, 'nrmse', step)]:8.3f}")
