import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from mogan.data import generate_clip, SyntheticClipSpec, translation_clip
from mogan.flow import (
    FlowConfig,
    HornSchunckFlow,
    estimate_flow,
    flow_to_motion,
    interior_crop,
    visualize_flow,
    write_flow_pngs,
)


@pytest.fixture(scope="module")
def estimator():
    return HornSchunckFlow()


class TestEstimateFlow:
    def test_static_clip_is_zero_flow(self, estimator):
        video, _ = translation_clip(1, velocity=(0, 0))
        flow = estimator(video)
        assert float(flow.abs().max()) < 0.05

    def test_translation_accuracy(self, estimator):
        video, _ = translation_clip(0, velocity=(2, 1))
        flow = estimator(video)
        target = torch.tensor([2.0, 1.0])[None, :, None, None]
        epe = (interior_crop(flow) - target).norm(dim=1).mean()
        assert float(epe) < 0.5

    def test_time_reversal_antisymmetry(self, estimator):
        video, _ = translation_clip(2, velocity=(2, 1))
        fwd = estimator(video)
        bwd = estimator(video.flip(0))
        resid = interior_crop(fwd + bwd.flip(0)).abs().mean()
        assert float(resid) < 0.5

    def test_single_frame_rejected(self, estimator):
        with pytest.raises(ValueError, match="two frames"):
            estimator(torch.rand(1, 3, 16, 16))

    def test_shapes(self, estimator):
        flow = estimator(torch.rand(4, 3, 16, 16))
        assert flow.shape == (3, 2, 16, 16)
        flow_b = estimator(torch.rand(2, 4, 3, 16, 16))
        assert flow_b.shape == (2, 3, 2, 16, 16)

    def test_differentiability_matches_finite_differences(self):
        est = HornSchunckFlow(FlowConfig(iterations=25, levels=2))
        video, _ = translation_clip(3, velocity=(1, 0), frames=3, height=16, width=16)
        video = video.double().requires_grad_(True)
        loss = est(video).sum()
        (g,) = torch.autograd.grad(loss, video)
        rng = torch.Generator().manual_seed(0)
        h = 1e-6
        for _ in range(8):
            t, c = int(torch.randint(3, (1,), generator=rng)), int(torch.randint(3, (1,), generator=rng))
            i, j = (int(torch.randint(2, 14, (1,), generator=rng)) for _ in range(2))
            vp = video.detach().clone()
            vp[t, c, i, j] += h
            vm = video.detach().clone()
            vm[t, c, i, j] -= h
            fd = (float(est(vp).sum()) - float(est(vm).sum())) / (2 * h)
            ad = float(g[t, c, i, j])
            assert fd == pytest.approx(ad, rel=1e-3, abs=1e-8)

    def test_no_parameters_to_train(self, estimator):
        assert list(estimator.parameters()) == []

    def test_sprite_motion_direction(self, estimator):
        video, gt = generate_clip(SyntheticClipSpec(velocity=(2.0, 0.0)), seed=3)
        flow = estimator(video)
        mask = gt.abs().sum(1) > 0
        assert float(flow[:, 0][mask].mean()) > 1.0
        assert abs(float(flow[:, 1][mask].mean())) < 0.5


class TestFlowToMotion:
    def test_zero_flow_zero_motion(self):
        motion = flow_to_motion(torch.zeros(5, 2, 8, 8))
        assert motion.shape == (6, 3, 8, 8)
        assert torch.equal(motion, torch.zeros(6, 3, 8, 8))

    def test_three_four_five_magnitude(self):
        flow = torch.zeros(4, 2, 8, 8)
        flow[:, 0] = 3.0
        flow[:, 1] = 4.0
        motion = flow_to_motion(flow)
        assert torch.allclose(motion[:, 2], torch.full((5, 8, 8), 5.0))

    def test_last_frame_duplicated(self):
        flow = torch.randn(6, 2, 4, 4)
        motion = flow_to_motion(flow)
        assert motion.shape[0] == 7
        assert torch.equal(motion[-1], motion[-2])
        assert torch.equal(motion[:6, :2], flow)

    @given(st.integers(0, 1000))
    def test_magnitude_channel_invariant(self, seed):
        g = torch.Generator().manual_seed(seed)
        flow = torch.randn(3, 2, 4, 4, generator=g)
        motion = flow_to_motion(flow)
        mag = (motion[:, 0] ** 2 + motion[:, 1] ** 2).sqrt()
        assert torch.allclose(motion[:, 2], mag, atol=1e-6)

    def test_batched(self):
        motion = flow_to_motion(torch.randn(2, 5, 2, 8, 8))
        assert motion.shape == (2, 6, 3, 8, 8)


class TestVisualizeFlow:
    def test_zero_flow_is_neutral_white(self):
        frames = visualize_flow(torch.zeros(2, 2, 8, 8))
        assert len(frames) == 2
        for f in frames:
            assert f.dtype == np.uint8
            assert (f == 255).all()

    def test_constant_flow_uniform_hue(self):
        flow = torch.zeros(1, 2, 16, 16)
        flow[:, 0] = 2.0
        (frame,) = visualize_flow(flow)
        assert (frame == frame[0, 0]).all()

    def test_rotating_flow_varies_spatially(self):
        ys, xs = torch.meshgrid(torch.arange(9.0) - 4, torch.arange(9.0) - 4, indexing="ij")
        flow = torch.stack([-ys, xs])[None]  # rigid rotation about the center
        (frame,) = visualize_flow(flow)
        corners = {tuple(frame[0, 0]), tuple(frame[0, -1]), tuple(frame[-1, 0]), tuple(frame[-1, -1])}
        assert len(corners) >= 3

    def test_png_naming(self, tmp_path):
        flow = torch.randn(3, 2, 8, 8)
        paths = write_flow_pngs(flow, tmp_path, "clipX")
        assert [p.name for p in paths] == [f"clipX_flow_{k:04d}.png" for k in range(3)]
        assert all(p.exists() for p in paths)


def test_estimator_default_construction():
    video, _ = translation_clip(5, velocity=(1, 0), frames=3)
    flow = estimate_flow(video)
    assert flow.shape == (2, 2, 32, 32)
