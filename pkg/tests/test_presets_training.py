"""Preset round trips, schedules, training mechanics, and checkpoints."""

import math

import pytest
import torch

from seqdesign.config import config_hash, emit_config, parse_config
from seqdesign.errors import CheckpointError, ConfigError, TrainingDiverged
from seqdesign.presets import (
    ExperimentPreset,
    ablation_switches,
    apply_preset_overrides,
    preset_from_config,
    scale_preset,
)
from seqdesign.simulators import builtin_config
from seqdesign.training import (
    build_bundle,
    build_lr_fn,
    bundle_from_checkpoint,
    run_eval,
    run_training,
    step_seed,
)

DOC = builtin_config()
ALL_PRESETS = sorted(s.split(":", 1)[1] for s in DOC if s.startswith("preset:"))


class TestPresetConfig:
    @pytest.mark.parametrize("key", ALL_PRESETS)
    def test_round_trip_lossless(self, key):
        preset = preset_from_config(DOC, key)
        text = emit_config(preset.to_config())
        reparsed = preset_from_config(parse_config(text), key)
        assert reparsed == preset
        assert emit_config(reparsed.to_config()) == text
        assert reparsed.hash() == preset.hash()

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset_from_config(DOC, "nope")

    def test_paper_scale_recipes(self):
        lf = preset_from_config(DOC, "lf-dad-t30")
        assert lf.instances_per_epoch == 200_000 and lf.batch_size == 256
        assert [p.epochs for p in lf.phases] == [50, 400]
        assert lf.phases[0].explore == {"kind": "constant", "value": 1.0}
        ces = preset_from_config(DOC, "ces-t10")
        assert len(ces.phases) == 1  # no pretraining, joint only
        assert ces.phases[0].explore["value"] == 0.0
        idp = preset_from_config(DOC, "id-sigma1e-3")
        assert idp.grad_clip == 5.0 and idp.batch_size == 48
        assert idp.phases[0].epochs == 500
        assert idp.rollout.length_schedule["start"] == 2
        assert idp.optimizer.kind == "adamw" and idp.optimizer.weight_decay == 0.0

    def test_ablation_switches(self):
        preset = preset_from_config(DOC, "lf-desk")
        mod = ablation_switches(preset, {"window": 5})
        assert mod.rollout.window == 5 and preset.rollout.window is None
        mod2 = ablation_switches(preset, {"fixed_length": True})
        assert mod2.rollout.fixed_length
        mod3 = ablation_switches(preset, {"nested_bptt": True})
        assert mod3.rollout.nested_bptt
        vanilla = ablation_switches(preset, {})
        assert vanilla.hash() == preset.hash()
        with pytest.raises(ConfigError):
            ablation_switches(preset, {"horizon": 5})

    def test_dotted_overrides(self):
        preset = preset_from_config(DOC, "lf-desk")
        mod = apply_preset_overrides(preset, {"posterior_kind": "flow",
                                              "policy.hidden_width": 16})
        assert mod.posterior_kind == "flow" and mod.policy.hidden_width == 16
        with pytest.raises(ConfigError):
            apply_preset_overrides(preset, {"policy.width": 3})

    def test_scale_preset(self):
        preset = preset_from_config(DOC, "lf-dad-t30")
        small = scale_preset(preset, 0.1)
        assert small.instances_per_epoch == 20_000
        assert [p.epochs for p in small.phases] == [5, 40]
        assert small.policy.hidden_width == 12
        assert small.history.d_model % small.history.n_heads == 0
        with pytest.raises(ConfigError):
            scale_preset(preset, 0.0)


class TestLRSchedules:
    def test_ramp_cosine_hits_peak_exactly(self):
        fn = build_lr_fn({"kind": "ramp-cosine", "ramp_frac": 0.1, "start": 1e-8,
                          "peak": 1e-3, "end": 5e-4}, total_iters=1000)
        assert fn(0) == 1e-8
        assert fn(100) == 1e-3
        assert abs(fn(999) - 5e-4) < 1e-8
        assert all(fn(i) <= 1e-3 + 1e-12 for i in range(1000))

    def test_one_cycle_hits_peak_exactly(self):
        fn = build_lr_fn({"kind": "one-cycle", "peak": 1e-4, "div": 10,
                          "final_div": 1e4, "ramp_frac": 0.05}, total_iters=2000)
        assert fn(0) == 1e-5
        assert fn(100) == 1e-4
        assert abs(fn(1999) - 1e-8) < 1e-10

    def test_step_seed_distinct(self):
        seeds = {step_seed(0, i, s) for i in range(100) for s in (0, 1)}
        assert len(seeds) == 200


@pytest.fixture(scope="module")
def smoke_preset():
    preset = preset_from_config(DOC, "lf-desk")
    small = scale_preset(preset, 0.05)
    for phase in small.phases:
        phase.epochs = 2
    small.instances_per_epoch = 1024
    return small


class TestTraining:
    def test_smoke_run_and_checkpoint(self, smoke_preset, tmp_path):
        res = run_training(smoke_preset, tmp_path / "run", quiet=True)
        assert res.checkpoint.exists() and res.metrics_path.exists()
        assert len(res.loss_curve) == 4 * (1024 // 256)
        assert all(math.isfinite(v) for v in res.loss_curve)
        bundle, payload = bundle_from_checkpoint(res.checkpoint)
        assert payload["preset_key"] == "lf-desk"
        assert payload["preset_hash"] == smoke_preset.hash()

    def test_resume_reproduces_curve_bitwise(self, smoke_preset, tmp_path):
        full = run_training(smoke_preset, tmp_path / "full", quiet=True)
        part = run_training(smoke_preset, tmp_path / "part", quiet=True,
                            checkpoint_every_epoch=True)
        # Restart from the mid-run checkpoint and compare the tail.
        mid = tmp_path / "part" / "ckpt-epoch0002.pt"
        resumed = run_training(smoke_preset, tmp_path / "part", quiet=True,
                               resume=mid)
        assert resumed.loss_curve == full.loss_curve

    def test_two_runs_identical(self, smoke_preset, tmp_path):
        a = run_training(smoke_preset, tmp_path / "a", quiet=True,
                         checkpoint_every_epoch=False)
        b = run_training(smoke_preset, tmp_path / "b", quiet=True,
                         checkpoint_every_epoch=False)
        assert a.loss_curve == b.loss_curve

    def test_divergence_dump(self, smoke_preset, tmp_path, monkeypatch):
        import seqdesign.training as training_mod

        def exploding(*args, **kwargs):
            bad = torch.tensor(float("nan"), requires_grad=True)
            return bad, None

        monkeypatch.setattr(training_mod, "train_rollout", exploding)
        with pytest.raises(TrainingDiverged) as err:
            run_training(smoke_preset, tmp_path / "boom", quiet=True)
        assert err.value.batch_seed is not None
        assert (tmp_path / "boom" / "diverged.json").exists()

    def test_eval_hash_guard(self, smoke_preset, tmp_path):
        res = run_training(smoke_preset, tmp_path / "run", quiet=True,
                           checkpoint_every_epoch=False)
        other = preset_from_config(DOC, "ces-desk")
        with pytest.raises(CheckpointError):
            run_eval(res.checkpoint, "spce", contrastive_size=10, n_outer=8,
                     expected_preset=other, quiet=True)
        rows = run_eval(res.checkpoint, "spce", contrastive_size=50, n_outer=16,
                        expected_preset=other, force=True, quiet=True)
        assert {r["policy"] for r in rows} == {"learned", "random"}

    def test_eval_rows_and_csv(self, smoke_preset, tmp_path):
        res = run_training(smoke_preset, tmp_path / "run", quiet=True,
                           checkpoint_every_epoch=False)
        rows = run_eval(res.checkpoint, "spce", out_dir=tmp_path / "eval",
                        contrastive_size=100, n_outer=32, horizons=[2, 5],
                        quiet=True)
        assert (tmp_path / "eval" / "spce.csv").exists()
        horizons = {(r["policy"], r["horizon"]) for r in rows}
        assert horizons == {("learned", 2), ("learned", 5),
                            ("random", 2), ("random", 5)}
        for r in rows:
            assert r["mean"] <= math.log(101) + 3 * (r["se"] or 1)

    def test_eval_deterministic(self, smoke_preset, tmp_path):
        res = run_training(smoke_preset, tmp_path / "run", quiet=True,
                           checkpoint_every_epoch=False)
        rows_a = run_eval(res.checkpoint, "spce", contrastive_size=200,
                          n_outer=32, seed=7, quiet=True)
        rows_b = run_eval(res.checkpoint, "spce", contrastive_size=200,
                          n_outer=32, seed=7, quiet=True)
        assert rows_a == rows_b

    def test_spce_rejected_for_id_checkpoint(self, tmp_path, desk_corpus_path):
        from seqdesign.errors import UnsupportedMetricError

        preset = preset_from_config(DOC, "id-desk")
        for phase in preset.phases:
            phase.epochs = 1
        preset.instances_per_epoch = 64
        res = run_training(preset, tmp_path / "id", quiet=True,
                           corpus_path=str(desk_corpus_path),
                           checkpoint_every_epoch=False)
        with pytest.raises(UnsupportedMetricError):
            run_eval(res.checkpoint, "spce", corpus_path=str(desk_corpus_path),
                     quiet=True)
