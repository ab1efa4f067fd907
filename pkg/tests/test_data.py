import math

import pytest
import torch

from mogan.common import ConfigError, make_rng
from mogan.data import (
    CLASS_FAMILIES,
    Corpus,
    CorpusConfig,
    PromptSet,
    SyntheticClipSpec,
    build_corpus,
    default_prompt_set,
    generate_clip,
    load_corpus,
    make_degraded,
    save_corpus,
    smoothness_calibration,
    translation_clip,
)
from mogan.flow import HornSchunckFlow


class TestGenerateClip:
    def test_zero_velocity_zero_flow(self):
        _, flow = generate_clip(SyntheticClipSpec(velocity=(0.0, 0.0)), seed=1)
        assert torch.equal(flow, torch.zeros_like(flow))

    def test_linear_flow_inside_mask(self):
        video, flow = generate_clip(SyntheticClipSpec(velocity=(2.0, 1.0)), seed=2)
        mask = flow.abs().sum(1) > 0
        assert mask.any()
        assert torch.allclose(flow[:, 0][mask], torch.tensor(2.0), atol=1e-5)
        assert torch.allclose(flow[:, 1][mask], torch.tensor(1.0), atol=1e-5)
        assert video.shape == (16, 3, 32, 32)
        assert 0.0 <= float(video.min()) and float(video.max()) <= 1.0

    def test_circular_magnitude_matches_kinematics(self):
        spec = SyntheticClipSpec(trajectory="circular", velocity=(2.0, 0.0), orbit_radius=8.0)
        _, flow = generate_clip(spec, seed=3)
        omega = 2.0 / 8.0
        expected = 2 * 8.0 * math.sin(omega / 2)  # chord length per frame
        mag = flow.norm(dim=1)
        inside = mag[mag > 0]
        assert float(inside.mean()) == pytest.approx(expected, rel=0.05)

    def test_determinism(self):
        spec = SyntheticClipSpec(velocity=(1.5, -0.5), trajectory="bounce")
        a_video, a_flow = generate_clip(spec, seed=9)
        b_video, b_flow = generate_clip(spec, seed=9)
        assert torch.equal(a_video, b_video)
        assert torch.equal(a_flow, b_flow)

    def test_oversized_sprite_rejected(self):
        with pytest.raises(ConfigError, match="fit"):
            SyntheticClipSpec(radius=20.0, height=32, width=32)

    def test_unknown_trajectory_rejected(self):
        with pytest.raises(ConfigError, match="trajectory"):
            SyntheticClipSpec(trajectory="spiral")

    def test_bounce_stays_in_frame(self):
        spec = SyntheticClipSpec(trajectory="bounce", velocity=(3.0, 2.0), frames=24)
        video, flow = generate_clip(spec, seed=4)
        assert torch.isfinite(video).all()
        assert float(flow.norm(dim=1).max()) <= math.hypot(3.0, 2.0) + 1e-5


@pytest.fixture(scope="module")
def slow_clip():
    video, _ = generate_clip(SyntheticClipSpec(velocity=(0.5, 0.25)), seed=5)
    return video


class TestMakeDegraded:
    def test_static_freezes_first_frame(self, slow_clip):
        out = make_degraded(slow_clip, "static")
        assert torch.equal(out[3], slow_clip[0])
        est = HornSchunckFlow()
        assert float(est(out).abs().max()) < 0.05

    def test_jitter_raises_difference_energy(self, slow_clip):
        out = make_degraded(slow_clip, "jitter", make_rng(0), amplitude=3)
        clean = float(((slow_clip[1:] - slow_clip[:-1]) ** 2).mean())
        jittered = float(((out[1:] - out[:-1]) ** 2).mean())
        assert jittered >= 5 * clean

    def test_ghost_is_blend_of_shifted_copies(self, slow_clip):
        out = make_degraded(slow_clip, "ghost")
        assert out.shape == slow_clip.shape
        assert torch.allclose(out[5], 0.5 * slow_clip[5] + 0.5 * slow_clip[3])

    def test_ghost_flow_is_bimodal(self):
        # Histogram oracle: ghosting blends two motion layers, so per-pixel
        # displacement magnitudes should cluster at two separated modes.
        video, _ = generate_clip(
            SyntheticClipSpec(velocity=(2.5, 0.0), radius=8.0), seed=6
        )
        ghost = make_degraded(video, "ghost")
        est = HornSchunckFlow()
        flow = est(ghost)
        u = flow[:, 0].flatten()
        moving = u[u.abs() > 0.4]
        lo = (moving < 1.2).float().mean()
        hi = (moving >= 1.2).float().mean()
        assert float(lo) > 0.15 and float(hi) > 0.15

    def test_unknown_mode(self, slow_clip):
        with pytest.raises(ConfigError, match="unknown degradation"):
            make_degraded(slow_clip, "blur")


class TestTranslationClip:
    def test_exact_flow(self):
        video, flow = translation_clip(0, velocity=(2, 1))
        assert torch.equal(flow[:, 0], torch.full_like(flow[:, 0], 2.0))
        assert torch.equal(flow[:, 1], torch.full_like(flow[:, 1], 1.0))
        assert torch.equal(video[1], torch.roll(video[0], shifts=(1, 2), dims=(-2, -1)))


class TestPromptSet:
    def test_default_prompt_set(self):
        ps = default_prompt_set(8)
        assert len(ps) == 8
        assert len({p.id for p in ps.prompts}) == 8

    def test_rejects_empty(self):
        with pytest.raises(ConfigError, match="non-empty"):
            PromptSet(())

    def test_rejects_duplicate_ids(self):
        from mogan.data import Prompt

        with pytest.raises(ConfigError, match="unique"):
            PromptSet((Prompt("a", 0, "x"), Prompt("a", 1, "y")))

    def test_train_eval_ids_disjoint(self):
        train = default_prompt_set(8, "train")
        eval_ = default_prompt_set(8, "eval")
        assert not {p.id for p in train.prompts} & {p.id for p in eval_.prompts}


@pytest.fixture(scope="module")
def small_cfg():
    return CorpusConfig(clips=24, eval_clips=8, seed=3)


class TestCorpus:
    def test_regeneration_bit_identical(self, small_cfg):
        a = build_corpus(small_cfg)
        b = build_corpus(small_cfg)
        assert len(a) == 24
        for i in range(len(a)):
            assert torch.equal(a._videos[i], b._videos[i])
            assert a.records[i] == b.records[i]

    def test_train_eval_ids_disjoint(self, small_cfg):
        train = build_corpus(small_cfg, "train")
        eval_ = build_corpus(small_cfg, "eval")
        train_ids = {r.clip_id for r in train.records}
        eval_ids = {r.clip_id for r in eval_.records}
        assert not train_ids & eval_ids

    def test_class_coverage(self, small_cfg):
        corpus = build_corpus(small_cfg)
        assert {corpus.class_id(i) for i in range(len(corpus))} == set(range(8))

    def test_sample_batch_deterministic(self, small_cfg):
        corpus = build_corpus(small_cfg)
        va, ca = corpus.sample_batch(4, make_rng(7))
        vb, cb = corpus.sample_batch(4, make_rng(7))
        assert torch.equal(va, vb) and torch.equal(ca, cb)
        assert va.shape == (4, 16, 3, 32, 32)

    def test_speed_ranges_respected(self):
        cfg = CorpusConfig(clips=32, slow_fraction=1.0, slow_range=(0.0, 0.3), seed=1)
        corpus = build_corpus(cfg)
        for rec in corpus.records:
            assert math.hypot(*rec.spec.velocity) <= 0.3 + 1e-6

    def test_invalid_family_trajectory_names_field(self):
        with pytest.raises(ConfigError, match="trajectory"):
            CorpusConfig(families=(("weird", "teleport", (1.0, 0.0)),), classes=1)

    def test_save_load_round_trip(self, small_cfg, tmp_path):
        train = build_corpus(small_cfg, "train")
        eval_ = build_corpus(small_cfg, "eval")
        calib = smoothness_calibration(train)
        save_corpus(tmp_path / "data", small_cfg, train, eval_, calib)
        t2, e2, manifest = load_corpus(tmp_path / "data")
        assert manifest["smoothness_calibration"] == calib
        assert len(t2) == len(train) and len(e2) == len(eval_)
        for i in range(len(train)):
            assert torch.equal(t2._videos[i], train._videos[i])
            assert t2.records[i].spec == train.records[i].spec

    def test_load_missing_manifest(self, tmp_path):
        with pytest.raises(ConfigError, match="manifest"):
            load_corpus(tmp_path / "nope")
