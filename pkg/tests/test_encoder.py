import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gcmetrics.core import ConfigurationError, InvalidInputError, cosine_similarity
from gcmetrics.data import PhantomConfig, generate_cohort
from gcmetrics.encoder import (
    ContrastiveTrainConfig,
    EncoderModel,
    augment_pair,
    default_input_shape,
    embed,
    init_encoder,
    nt_xent_loss,
    train_encoder,
)
from gcmetrics.nets import resize, to_batch
from gcmetrics.views import side_view

from conftest import ENCODER_CONFIG


def test_nt_xent_hand_case():
    z = [(1, 0), (1, 0), (0, 1), (0, 1)]
    expected = -math.log(math.exp(2) / (math.exp(2) + 2))
    assert expected == pytest.approx(math.log1p(2 * math.exp(-2)), abs=1e-15)
    assert nt_xent_loss(z, 0.5) == pytest.approx(expected, abs=1e-5)


@pytest.mark.parametrize("n", [2, 3, 5])
def test_nt_xent_identical_embeddings(n):
    z = np.ones((2 * n, 3))
    assert nt_xent_loss(z, 0.7) == pytest.approx(math.log(2 * n - 1), abs=1e-12)


def test_nt_xent_decreases_with_positive_similarity():
    def loss(theta):
        z = [
            (1, 0, 0, 0), (math.cos(theta), 0, 0, math.sin(theta)),
            (0, 1, 0, 0), (0, 0, 1, 0),
        ]
        return nt_xent_loss(z, 0.5)

    values = [loss(t) for t in (1.2, 0.8, 0.4, 0.0)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_nt_xent_errors():
    with pytest.raises(InvalidInputError):
        nt_xent_loss(np.ones((2, 3)), 0.5)
    with pytest.raises(InvalidInputError):
        nt_xent_loss(np.ones((5, 3)), 0.5)
    with pytest.raises(InvalidInputError):
        nt_xent_loss(np.ones((4, 3)), 0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_nt_xent_pair_permutation_invariance(n, seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(2 * n, 4))
    pairs = z.reshape(n, 2, 4)
    perm = rng.permutation(n)
    swapped = pairs[perm][:, ::-1] if seed % 2 else pairs[perm]
    assert nt_xent_loss(swapped.reshape(2 * n, 4), 0.5) == pytest.approx(nt_xent_loss(z, 0.5), abs=1e-9)


def central_difference_grad(f, z, h=1e-6):
    g = np.zeros_like(z)
    for idx in np.ndindex(z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += h
        zm[idx] -= h
        g[idx] = (f(zp) - f(zm)) / (2 * h)
    return g


@pytest.mark.parametrize("seed", range(5))
def test_nt_xent_gradient_matches_finite_differences(seed):
    z = np.random.default_rng(seed).normal(size=(4, 4))
    t = torch.tensor(z, dtype=torch.float64, requires_grad=True)
    nt_xent_loss(t, 0.5).backward()
    fd = central_difference_grad(lambda v: nt_xent_loss(v, 0.5), z)
    assert np.linalg.norm(t.grad.numpy() - fd) <= 1e-4 * np.linalg.norm(fd)


@pytest.fixture(scope="module")
def phantom():
    return generate_cohort(1, PhantomConfig(noise_level=0.02, seed=31))[0].image


def test_augment_identity_pipeline(phantom):
    cfg = ContrastiveTrainConfig(augmentations=())
    a, b = augment_pair(phantom, cfg, 0)
    expected = resize(to_batch(phantom), default_input_shape(phantom.shape))[0, 0].double().numpy()
    assert np.array_equal(a, b)
    assert np.allclose(a, np.clip(expected, 0, 1))


def test_augment_deterministic_and_shaped(phantom):
    a1, b1 = augment_pair(phantom, ENCODER_CONFIG, 42)
    a2, b2 = augment_pair(phantom, ENCODER_CONFIG, 42)
    assert np.array_equal(a1, a2) and np.array_equal(b1, b2)
    assert a1.shape == b1.shape == (86, 96)
    assert a1.min() >= 0 and a1.max() <= 1


def test_crop_resize_views_differ(phantom):
    cfg = ContrastiveTrainConfig(augmentations=("crop_resize",))
    differ = sum(not np.array_equal(*augment_pair(phantom, cfg, s)) for s in range(100))
    assert differ >= 99


def test_config_validation():
    with pytest.raises(ConfigurationError):
        ContrastiveTrainConfig(batch_size=1)
    with pytest.raises(ConfigurationError):
        ContrastiveTrainConfig(temperature=0)
    with pytest.raises(ConfigurationError):
        ContrastiveTrainConfig(augmentations=("rotate",))


def test_train_rejects_insufficient_data():
    recs = generate_cohort(3, PhantomConfig(seed=1))
    with pytest.raises(InvalidInputError):
        train_encoder(recs, ContrastiveTrainConfig(batch_size=4))


@pytest.fixture(scope="module")
def quick_cohort():
    return generate_cohort(16, PhantomConfig(noise_level=0.02, seed=32))


def test_training_is_deterministic(quick_cohort, phantom):
    cfg = ContrastiveTrainConfig(epochs=2, batch_size=8, seed=4)
    a, b = train_encoder(quick_cohort, cfg), train_encoder(quick_cohort, cfg)
    view = side_view(phantom, "superior")
    assert np.allclose(embed(a, view), embed(b, view), rtol=1e-6, atol=1e-7)
    assert a.training_config_digest == b.training_config_digest


def test_save_load_round_trip(tmp_path, quick_cohort, phantom):
    cfg = ContrastiveTrainConfig(epochs=1, batch_size=8, seed=4, feature_source="projection")
    model = train_encoder(quick_cohort, cfg)
    model.save(tmp_path / "enc")
    loaded = EncoderModel.load(tmp_path / "enc")
    assert loaded.feature_source == "projection" and loaded.embedding_dim == 32
    view = side_view(phantom, "inferior")
    assert np.array_equal(embed(loaded, view), embed(model, view))


# -- trained on the shared 500-phantom cohort --------------------------------

def test_embed_contract(encoder, test_cohort):
    views = [side_view(r.image, s) for r in test_cohort[:50] for s in ("superior", "inferior")]
    feats = encoder.embed_batch(np.stack(views))
    assert feats.shape == (100, encoder.embedding_dim)
    assert np.all(np.isfinite(feats))
    assert np.all(np.linalg.norm(feats, axis=1) > 0)
    assert np.array_equal(embed(encoder, views[0]), embed(encoder, views[0]))
    # any view shape is resampled to the input shape
    assert embed(encoder, test_cohort[0].image).shape == (encoder.embedding_dim,)


def augmentation_gap(model, records, config):
    pairs = [augment_pair(r.image, config, 1000 + i) for i, r in enumerate(records)]
    a = model.embed_batch(np.stack([p[0] for p in pairs]))
    b = model.embed_batch(np.stack([p[1] for p in pairs]))
    same = np.mean([cosine_similarity(x, y) for x, y in zip(a, b)])
    other = np.mean([cosine_similarity(x, y) for x, y in zip(a, np.roll(b, 1, axis=0))])
    return same - other


def test_trained_gap_beats_untrained(encoder, test_cohort):
    held_out = test_cohort[:100]
    trained = augmentation_gap(encoder, held_out, ENCODER_CONFIG)
    baseline = augmentation_gap(init_encoder(ENCODER_CONFIG, held_out[0].image.shape), held_out, ENCODER_CONFIG)
    assert trained > 0
    assert trained > baseline


def test_superior_inferior_separation(encoder, test_cohort):
    recs = test_cohort[:100]
    sup = encoder.embed_batch(np.stack([side_view(r.image, "superior") for r in recs]))
    inf = encoder.embed_batch(np.stack([side_view(r.image, "inferior") for r in recs]))
    same = np.mean([cosine_similarity(a, b) for a, b in zip(sup, inf)])
    other = np.mean([cosine_similarity(a, b) for a, b in zip(sup, np.roll(inf, 1, axis=0))])
    assert same > other
