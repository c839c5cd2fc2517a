import numpy as np
import pytest

import coda4dgs as coda

SPEC = """\
seed = 5
frames = 2
width = 16
height = 12
feature_dim = 8
background_count = 12
object = count=6 color=0.8,0.2,0.2 extent=0.3,0.3,0.3 c0=-0.8,0.2,0.5 size=0.15
"""

CONFIG = """\
data = {data}
split = reconstruction
total_steps = 40
static_phase_steps = 40
feature_dim = 8
time_embed_dim = 8
hexplane_levels = 1
hexplane_base_res = 8
hexplane_features = 4
latent_hidden = 16
latent_dim = 16
head_hidden = 16
prune_interval = 0
seed = 7
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("coda")
    data = root / "data"
    spec = root / "spec.txt"
    spec.write_text(SPEC)
    frames = coda.generate_dataset(str(spec), str(data))
    assert frames == 2
    config = root / "config.txt"
    config.write_text(CONFIG.format(data=data))
    model, loss_csv = coda.train(str(config))
    return root, data, model, loss_csv


def test_training_runs_and_logs(workspace):
    _, _, model, loss_csv = workspace
    assert model.step == 40
    assert model.count > 0
    assert model.feature_dim == 8
    assert model.frames == 2
    rows = loss_csv.strip().splitlines()
    assert rows[0].startswith("step,lr,")
    assert len(rows) == 41


def test_render_and_metrics(workspace):
    _, data, model, _ = workspace
    out = model.render(str(data))
    rgb = out["rgb"]
    assert rgb.shape == (12, 16, 3)
    assert out["depth"].shape == (12, 16, 1)
    assert out["feature"].shape == (12, 16, 8)
    accum = out["accum"]
    assert accum.min() >= 0.0 and accum.max() <= 1.0

    assert coda.psnr(rgb, rgb) == 99.0
    assert coda.ssim(rgb, rgb) == pytest.approx(1.0, abs=1e-12)

    turned = model.render(str(data), t=1.0, yaw=10.0)["rgb"]
    assert not np.array_equal(turned, rgb)


def test_checkpoint_round_trip(workspace, tmp_path):
    _, data, model, _ = workspace
    path = tmp_path / "model.c4dc"
    model.save(str(path))
    loaded = coda.load_checkpoint(str(path))
    assert loaded.count == model.count
    assert loaded.step == model.step
    a = model.render(str(data))["rgb"]
    b = loaded.render(str(data))["rgb"]
    assert np.array_equal(a, b)


def test_bad_checkpoint_raises(tmp_path):
    path = tmp_path / "broken.c4dc"
    path.write_bytes(b"NOPE not a checkpoint")
    with pytest.raises(ValueError):
        coda.load_checkpoint(str(path))


def test_helpers(workspace):
    _, _, model, _ = workspace
    zeros = coda.time_embedding(0, 16)
    assert zeros.shape == (16,)
    assert np.all(zeros == 0.0)
    e = coda.time_embedding(3, 8)
    assert e[0] == pytest.approx(np.sin(3.0), abs=1e-15)

    feats = np.random.default_rng(1).uniform(-1, 1, size=(12, 16, 8))
    img = coda.pca_visualize(feats)
    assert img.shape == (12, 16, 3)
    assert img.min() >= 0.0 and img.max() <= 1.0

    ids = model.segment([1.0, 0, 0, 0, 0, 0, 0, 0], threshold=0.99)
    assert isinstance(ids, list)
