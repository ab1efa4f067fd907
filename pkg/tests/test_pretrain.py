import pytest
import torch

from mogan.common import ConfigError
from mogan.data import CorpusConfig, build_corpus
from mogan.models import ModelConfig, param_hash
from mogan.pretrain import (
    PretrainConfig,
    encode_corpus,
    load_base,
    pretrain_base,
    save_base,
)

MODEL = ModelConfig(
    width=32, depth=2, heads=2, latent_channels=2, frames_per_chunk=2,
    frame_size=16, decoder_width=16, decoder_hidden=8,
)


@pytest.fixture(scope="module")
def small_base():
    cfg = PretrainConfig(
        corpus=CorpusConfig(clips=24, eval_clips=4, frames=4, size=16, radius=4.0,
                            slow_fraction=0.5, seed=1),
        model=MODEL, teacher_steps=40, decoder_steps=30, batch_size=8,
        decoder_batch_size=4, seed=0,
    )
    teacher, decoder = pretrain_base(cfg)
    return cfg, teacher, decoder


def test_encode_corpus_shapes(small_base):
    cfg, _, _ = small_base
    corpus = build_corpus(cfg.corpus)
    latents, classes = encode_corpus(corpus, cfg.model)
    assert latents.shape == (24, 2, 2, 8, 8)
    assert classes.shape == (24,)


def test_pretraining_is_deterministic(small_base):
    cfg, teacher, decoder = small_base
    teacher2, decoder2 = pretrain_base(cfg)
    assert param_hash(teacher) == param_hash(teacher2)
    assert param_hash(decoder) == param_hash(decoder2)


def test_decoder_reconstructs_better_than_init(small_base):
    cfg, _, decoder = small_base
    from mogan.models import ChunkRecurrentDecoder, encode_video

    corpus = build_corpus(cfg.corpus)
    videos = torch.stack([corpus.video(i) for i in range(8)])
    latents = encode_video(videos, cfg.model)
    torch.manual_seed(0)
    fresh = ChunkRecurrentDecoder(cfg.model)
    with torch.no_grad():
        mse_trained = float(((decoder.decode_window(latents, 0, 2) - videos) ** 2).mean())
        mse_fresh = float(((fresh.decode_window(latents, 0, 2) - videos) ** 2).mean())
    assert mse_trained < mse_fresh


def test_save_load_round_trip(small_base, tmp_path):
    cfg, teacher, decoder = small_base
    path = save_base(tmp_path / "base.pt", teacher, decoder, cfg)
    t2, d2, cfg2 = load_base(path)
    assert param_hash(t2) == param_hash(teacher)
    assert param_hash(d2) == param_hash(decoder)
    assert cfg2.model == cfg.model


def test_load_rejects_wrong_version(small_base, tmp_path):
    cfg, teacher, decoder = small_base
    path = save_base(tmp_path / "base.pt", teacher, decoder, cfg)
    blob = torch.load(path, weights_only=False)
    blob["format_version"] = 0
    torch.save(blob, path)
    with pytest.raises(ConfigError, match="format_version=0"):
        load_base(path)
