from pathlib import Path

import numpy as np
import pytest
import torch

from ldcodec.autoencoder import ToyVAE
from ldcodec.codec import CodecContext
from ldcodec.diffusion import ToyDenoiser
from ldcodec.entropy import EntropyModel
from ldcodec.param_estimator import ParamEstimator
from ldcodec.schedule import build_schedule

ROOT = Path(__file__).resolve().parents[1]
TOY_CHECKPOINT = ROOT / "checkpoints" / "toy"
GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def schedule():
    return build_schedule("linear", 1000, 1e-4, 0.02)


def make_tiny_context(schedule, context=False, seed=0) -> CodecContext:
    torch.manual_seed(seed)
    vae = ToyVAE(widths=(8, 16, 16)).eval()
    # random-init latents have std ~0.03; scale them to roughly unit variance as a fitted VAE would
    vae.scale_factor.fill_(30.0)
    backbone = ToyDenoiser(schedule, width=16, emb_dim=16).eval()
    # give the zero-initialised output layer some weight so the backbone is not trivial
    with torch.no_grad():
        backbone.out.weight.normal_(0, 0.02)
    estimator = ParamEstimator(widths=(8, 8, 8, 8)).eval()
    entropy = EntropyModel(hyper_channels=8, width=16, context=context).eval()
    return CodecContext(vae, backbone, estimator, entropy, schedule)


@pytest.fixture
def tiny_ctx(schedule):
    return make_tiny_context(schedule)


@pytest.fixture(scope="session")
def toy_ctx():
    if not (TOY_CHECKPOINT / "manifest.json").exists():
        pytest.skip("trained toy checkpoint not present; run demos/train_toy_codec.py")
    return CodecContext.load(TOY_CHECKPOINT)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, text in sorted(RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{status}] criterion {number}: {text}")
