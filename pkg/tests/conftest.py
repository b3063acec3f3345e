import numpy as np
import pytest
from hypothesis import settings

from transsa.bag_model import TransSA
from transsa.config import TrainConfig, config_from_text
from transsa.corpus import Bag, EncodedSentence

settings.register_profile("default", derandomize=True, deadline=None)
settings.register_profile("stress", max_examples=400, deadline=None)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(params=range(5))
def rng(request):
    return np.random.default_rng(request.param)


def tiny_config(**kw) -> TrainConfig:
    base = dict(d_w=4, d_p=2, max_len=10, d_model=8, h=2, d_ff_mult=3, dropout_p=0.0)
    base.update(kw)
    return TrainConfig(**base).validate()


def random_sentence(rng, length, vocab_size, radius, pad_to=None) -> EncodedSentence:
    words = rng.integers(1, vocab_size, size=length)
    n_pos = 2 * radius + 2
    p1 = rng.integers(1, n_pos, size=length)
    p2 = rng.integers(1, n_pos, size=length)
    enc = EncodedSentence(words, p1, p2, length, (0, 0, min(1, length - 1), min(1, length - 1)))
    return enc.padded(pad_to) if pad_to else enc


def random_bag(rng, n, n_labels, vocab_size, radius, min_len=1, max_len=8, key=("e1", "e2")) -> Bag:
    sents = [random_sentence(rng, int(rng.integers(min_len, max_len + 1)), vocab_size, radius)
             for _ in range(n)]
    return Bag(key, int(rng.integers(0, n_labels)), sents)


def scaled_model(cfg: TrainConfig, vocab_size: int, n_labels: int, rng, scale: float = 1.0) -> TransSA:
    """Model whose non-embedding weights are inflated so outputs are far from uniform."""
    m = TransSA.initialize(cfg, vocab_size, n_labels, rng)
    for name, t in m.params.items():
        if "embedding" not in name and not name.endswith(("gain",)):
            t.data *= scale
        if name.endswith(("bias", "b1", "b2", "b3")):
            t.data += rng.normal(0, 0.3, size=t.shape)
    return m


SYNTH_CFG_TEXT = open(__file__.replace("tests/conftest.py", "configs/synthetic.cfg")).read()


@pytest.fixture(scope="session")
def synthetic_run():
    """Train once on the acceptance-sized synthetic benchmark; shared by several tests."""
    import time

    from transsa.cli import synth_rng
    from transsa.synthetic import generate_synthetic
    from transsa.trainer import train

    cfg = config_from_text(SYNTH_CFG_TEXT).validate()
    data = generate_synthetic(cfg.synth, synth_rng(cfg.seed), cfg.max_len, cfg.radius, cfg.bag_key)
    t0 = time.perf_counter()
    res = train(cfg, data.train_bags, len(data.vocab), len(data.labels),
                np.random.default_rng(cfg.seed), vocab=data.vocab, labels=data.labels)
    return {"cfg": cfg, "data": data, "result": res, "seconds": time.perf_counter() - t0}
