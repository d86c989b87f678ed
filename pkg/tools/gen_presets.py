"""Regenerate src/seqdesign/data/presets.cfg from authored preset objects."""

from pathlib import Path

from seqdesign.config import emit_config, parse_config
from seqdesign.networks import HistoryConfig, PolicyConfig, PosteriorNetConfig
from seqdesign.presets import (
    ExperimentPreset,
    OptimizerSpec,
    PhaseSpec,
    RolloutSpec,
)

SIMULATORS = {
    "simulator:lf-dad-k2-t30": {"kind": "lf", "num_sources": 2, "prior": "normal",
                                "design_low": -4.0, "design_high": 4.0},
    "simulator:lf-idad-k2-t10": {"kind": "lf", "num_sources": 2, "prior": "normal",
                                 "design_low": -4.0, "design_high": 4.0},
    "simulator:lf-idad-k2-t20": {"kind": "lf", "num_sources": 2, "prior": "normal",
                                 "design_low": -4.0, "design_high": 4.0},
    "simulator:lf-aline-k1-t30": {"kind": "lf", "num_sources": 1, "prior": "uniform",
                                  "design_low": 0.0, "design_high": 1.0},
    "simulator:lf-desk-k1": {"kind": "lf", "num_sources": 1, "prior": "normal",
                             "design_low": -4.0, "design_high": 4.0},
    "simulator:ces-t10": {"kind": "ces"},
    "simulator:id-sigma0": {"kind": "id", "noise_level": 0.0, "image_size": 28,
                            "halfwidth": 7.0, "scale": 0.1},
    "simulator:id-sigma1e-3": {"kind": "id", "noise_level": 0.001, "image_size": 28,
                               "halfwidth": 7.0, "scale": 0.1},
    "simulator:id-sigma1e-2": {"kind": "id", "noise_level": 0.01, "image_size": 28,
                               "halfwidth": 7.0, "scale": 0.1},
    "simulator:id-desk": {"kind": "id", "noise_level": 0.001, "image_size": 14,
                          "halfwidth": 3.5, "scale": 0.1},
}

LF_PRETRAIN = PhaseSpec(
    name="pretrain", epochs=50,
    lr={"kind": "ramp-cosine", "ramp_frac": 0.08, "start": 1e-8,
        "peak": 1e-3, "end": 5e-4},
    explore={"kind": "constant", "value": 1.0})
LF_JOINT = PhaseSpec(
    name="joint", epochs=400,
    lr={"kind": "ramp-cosine", "ramp_frac": 0.02, "start": 5e-5,
        "peak": 1e-4, "end": 5e-5},
    explore={"kind": "constant", "value": 0.0})


def lf_full(key, simulator, horizon):
    return ExperimentPreset(
        key=key, simulator=simulator, horizon=horizon, batch_size=256,
        instances_per_epoch=200_000, posterior_kind="diffusion",
        policy=PolicyConfig(), history=HistoryConfig(),
        posterior_net=PosteriorNetConfig(), optimizer=OptimizerSpec(kind="adam"),
        rollout=RolloutSpec(length_schedule={"kind": "linear", "ramp_frac": 0.05,
                                             "start": 1}),
        phases=[LF_PRETRAIN, LF_JOINT])


def id_full(key, simulator):
    return ExperimentPreset(
        key=key, simulator=simulator, horizon=6, batch_size=48,
        instances_per_epoch=60_000, posterior_kind="diffusion",
        grad_clip=5.0,
        policy=PolicyConfig(backbone="resnet_mlp", squash="sigmoid",
                            hidden_width=128),
        history=HistoryConfig(kind="film_unet"),
        posterior_net=PosteriorNetConfig(kind="unet"),
        optimizer=OptimizerSpec(kind="adamw"),
        rollout=RolloutSpec(length_schedule={"kind": "linear", "ramp_frac": 0.05,
                                             "start": 2}),
        phases=[PhaseSpec(name="joint", epochs=500,
                          lr={"kind": "one-cycle", "peak": 1e-4, "div": 10.0,
                              "final_div": 1e4, "ramp_frac": 0.05},
                          explore={"kind": "cosine", "decay_frac": 0.30})])


def id_desk(key, posterior_kind):
    return ExperimentPreset(
        key=key, simulator="id-desk", horizon=4, batch_size=32,
        instances_per_epoch=1440, posterior_kind=posterior_kind,
        ode_steps=200, grad_clip=5.0,
        policy=PolicyConfig(backbone="resnet_mlp", squash="sigmoid",
                            hidden_width=64, block1=(8, 8, 4), block2=(4, 4, 2)),
        history=HistoryConfig(kind="film_unet", film_channels=(16, 16, 4),
                              film_mid=16, film_hidden=64, stages=(4, 8),
                              blocks=(2, 1), summary_channels=8),
        posterior_net=PosteriorNetConfig(kind="unet", stages=(8, 16),
                                         blocks=(2, 1), time_hidden=32),
        optimizer=OptimizerSpec(kind="adamw"),
        rollout=RolloutSpec(length_schedule={"kind": "linear", "ramp_frac": 0.05,
                                             "start": 2}),
        phases=[PhaseSpec(name="joint", epochs=40,
                          lr={"kind": "one-cycle", "peak": 3e-4, "div": 10.0,
                              "final_div": 1e3, "ramp_frac": 0.10},
                          explore={"kind": "cosine", "decay_frac": 0.30})])


PRESETS = [
    lf_full("lf-dad-t30", "lf-dad-k2-t30", 30),
    lf_full("lf-idad-t10", "lf-idad-k2-t10", 10),
    lf_full("lf-idad-t20", "lf-idad-k2-t20", 20),
    lf_full("lf-aline-t30", "lf-aline-k1-t30", 30),
    ExperimentPreset(
        key="ces-t10", simulator="ces-t10", horizon=10, batch_size=256,
        instances_per_epoch=200_000, posterior_kind="diffusion",
        policy=PolicyConfig(squash="sigmoid", squash_scale=100.0),
        history=HistoryConfig(), posterior_net=PosteriorNetConfig(),
        optimizer=OptimizerSpec(kind="adam"),
        rollout=RolloutSpec(length_schedule={"kind": "linear", "ramp_frac": 0.05,
                                             "start": 1}),
        phases=[PhaseSpec(name="joint", epochs=400,
                          lr={"kind": "ramp-cosine", "ramp_frac": 0.02,
                              "start": 5e-5, "peak": 1e-4, "end": 5e-5},
                          explore={"kind": "constant", "value": 0.0})]),
    id_full("id-sigma0", "id-sigma0"),
    id_full("id-sigma1e-3", "id-sigma1e-3"),
    id_full("id-sigma1e-2", "id-sigma1e-2"),
    # Desk-scale presets: same algorithm, shrunk widths/epochs for CPU runs.
    ExperimentPreset(
        key="lf-desk", simulator="lf-desk-k1", horizon=5, batch_size=256,
        instances_per_epoch=20_000, posterior_kind="diffusion", ode_steps=400,
        policy=PolicyConfig(hidden_width=32),
        history=HistoryConfig(d_model=16, ff_dim=64),
        posterior_net=PosteriorNetConfig(hidden_width=128),
        optimizer=OptimizerSpec(kind="adam"),
        rollout=RolloutSpec(length_schedule={"kind": "linear", "ramp_frac": 0.05,
                                             "start": 1}),
        phases=[PhaseSpec(name="pretrain", epochs=5,
                          lr={"kind": "ramp-cosine", "ramp_frac": 0.2,
                              "start": 1e-8, "peak": 1e-3, "end": 5e-4},
                          explore={"kind": "constant", "value": 1.0}),
                PhaseSpec(name="joint", epochs=20,
                          lr={"kind": "ramp-cosine", "ramp_frac": 0.1,
                              "start": 5e-5, "peak": 3e-4, "end": 1e-4},
                          explore={"kind": "constant", "value": 0.0})]),
    ExperimentPreset(
        key="ces-desk", simulator="ces-t10", horizon=4, batch_size=128,
        instances_per_epoch=5_000, posterior_kind="diffusion", ode_steps=400,
        grad_clip=5.0,
        policy=PolicyConfig(hidden_width=32, squash="sigmoid", squash_scale=100.0),
        history=HistoryConfig(d_model=16, ff_dim=64),
        posterior_net=PosteriorNetConfig(hidden_width=128),
        optimizer=OptimizerSpec(kind="adam"),
        rollout=RolloutSpec(length_schedule={"kind": "linear", "ramp_frac": 0.1,
                                             "start": 1}),
        phases=[PhaseSpec(name="joint", epochs=8,
                          lr={"kind": "ramp-cosine", "ramp_frac": 0.1,
                              "start": 5e-5, "peak": 3e-4, "end": 1e-4},
                          explore={"kind": "constant", "value": 0.0})]),
    id_desk("id-desk", "diffusion"),
    id_desk("id-desk-fm", "flow"),
]


def main():
    doc = dict(SIMULATORS)
    for preset in PRESETS:
        doc.update(preset.to_config())
    text = emit_config(doc)
    parse_config(text)  # sanity
    out = Path(__file__).resolve().parents[1] / "src" / "seqdesign" / "data" / "presets.cfg"
    out.write_text(text)
    print(f"wrote {out} ({len(doc)} sections)")


if __name__ == "__main__":
    main()
