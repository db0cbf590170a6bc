import numpy as np
import pytest

from gflfad.fusion import FusionConfig
from gflfad.mae import MaeConfig
from gflfad.model import GflFad

# toy dims: 4x4 spectrogram, 2x2 patches -> F = T = 2, N = 4
TOY_MAE = MaeConfig(enc_layers=1, dec_layers=1, embed_dim=8, dec_dim=8, heads=2, local_window=2, patch_h=2, patch_w=2)
TOY_FUSION = FusionConfig(d_model=8, heads=2)


@pytest.fixture
def toy_model():
    return GflFad(TOY_MAE, TOY_FUSION, seed=3)


@pytest.fixture
def toy_batch():
    rng = np.random.default_rng(5)
    specs = rng.normal(size=(3, 4, 4))
    labels = np.array([1, 0, 1])
    masked = np.array([[0], [2], [3]])
    visible = np.array([[1, 2, 3], [0, 1, 3], [0, 1, 2]])
    return specs, labels, masked, visible


def tiny_train_overrides(**kw):
    """TrainConfig fields for a fast CPU run on 8 short utterances."""
    base = dict(
        epochs=2,
        batch_size=4,
        enc_layers=1,
        dec_layers=1,
        embed_dim=16,
        dec_dim=16,
        heads=2,
        fusion_dim=16,
        fusion_heads=2,
        n_mels=32,
        target_samples=4000,
        seeds=(0,),
        tdcf_c1=1.0,
        tdcf_c2=10.0,
    )
    base.update(kw)
    return base


# acceptance results: (criterion, passed, detail), printed in the terminal summary
ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
