import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from atlseg.adapter import make_variant  # noqa: E402
from atlseg.data import DatasetSpec, generate_synthetic, split  # noqa: E402
from atlseg.encoder import EncoderConfig  # noqa: E402
from atlseg.decoder import DecoderConfig  # noqa: E402
from atlseg.model import ModelConfig  # noqa: E402


def tiny_config(variant: str | None = "TransLandSeg", d: int = 4) -> ModelConfig:
    """16 px images, 4 px patches, width 8: fast enough for exhaustive checks."""
    adapter = make_variant(variant, d) if variant else None
    enc = EncoderConfig(image_size=16, patch_size=4, embed_dim=8, num_blocks=2, num_heads=2, mlp_ratio=2)
    dec = DecoderConfig(dim=8, num_blocks=1, num_heads=2, mlp_ratio=2, upsample_stages=1, head_hidden=4)
    return ModelConfig(enc, adapter, dec)


def randomize(model, rng, scale=0.3):
    """Give every parameter (zero-initialised ones included) a random value."""
    for _, p in model.named_parameters():
        p.data = rng.normal(0.0, scale, size=p.shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_data():
    ds = generate_synthetic(DatasetSpec(count=16, image_size=16, seed=7))
    return split(ds, (0.75, 0.25), 7)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in module.TITLES.items():
        if n in module.RESULTS:
            _, ok, detail = module.RESULTS[n]
            status = "PASS" if ok else "FAIL"
        else:
            status, detail = "NOT RUN", "errored before recording or deselected"
        terminalreporter.write_line(f"[{status}] {n:2d}. {title}: {detail}")
