import numpy as np
import pytest
import torch

from eegcodec.codec import CodecConfig, build_codec


def tiny_config(**kw) -> CodecConfig:
    base = dict(base_channels=4, latent_dim=8, num_blocks=2, patch_seconds=1.0, sampling_rate_hz=32.0,
                num_quantizers=3, codebook_size=16, max_channels=16)
    base.update(kw)
    return CodecConfig(**base)


def initialised_codec(config: CodecConfig, seed: int = 0, n_patches: int = 64, dtype=torch.float32):
    codec = build_codec(config, seed=seed).to(dtype)
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn(n_patches, config.patch_length, generator=gen, dtype=dtype)
    with torch.no_grad():
        codec.quantizer.kmeans_init(codec.encode(x), generator=gen)
    return codec


@pytest.fixture
def tiny_codec():
    return initialised_codec(tiny_config())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
