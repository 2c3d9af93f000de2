import numpy as np
import pytest

from lfs.embeddings_io import EmbeddingSequence, SyntheticSpec, synth_generate
from lfs.captioner import ToyCaptioner


def random_sequence(n, d, seed=0, video_id="v"):
    rng = np.random.default_rng(seed)
    return EmbeddingSequence(video_id, n, d, rng.standard_normal((n, d)).astype(np.float32))


def small_corpus(n_videos=8, n_frames=64, dim=24, vocab=6, base_seed=11):
    spec = SyntheticSpec(n_frames=n_frames, dim=dim, n_events=3, event_len_mean=5,
                         event_len_jitter=2, background_noise=0.3,
                         vocab_size=vocab, seed=0)
    videos = []
    for i in range(n_videos):
        s = SyntheticSpec(**{**spec.__dict__, "seed": base_seed * 1000 + i})
        videos.append(synth_generate(s))
    return videos


@pytest.fixture
def corpus():
    return small_corpus()


@pytest.fixture
def oracle(corpus):
    v = corpus[0]
    return ToyCaptioner.seeded(v.caption.vocab_size, v.embeddings.dim, seed=42)
