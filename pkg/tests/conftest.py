import hashlib

import numpy as np
import pytest

from mmchain.chain import Chain
from mmchain.config import ChainConfig
from mmchain.microworld import WorldConfig, generate_corpus, partition_corpus


def small_config(**kw) -> ChainConfig:
    base = dict(hidden=16, token_embed=8, att_dim=8, embed_dim=8, max_frames=30, seed=3)
    base.update(kw)
    return ChainConfig(**base)


def state_hash(module) -> str:
    """Bytes of every parameter and buffer, for exact before/after checks."""
    h = hashlib.sha256()
    for name, p in sorted(module.parameters().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    for name, b in sorted(module.buffers().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(b).tobytes())
    return h.hexdigest()


@pytest.fixture(scope="session")
def corpus():
    return generate_corpus(120, WorldConfig(sigma_spk=0.3), seed=5)


@pytest.fixture(scope="session")
def partition(corpus):
    return partition_corpus(corpus, [24, 24, 24, 24, 12, 12], seed=5)


@pytest.fixture
def chain():
    return Chain(small_config())


# one line per acceptance criterion, filled in by test_acceptance
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
