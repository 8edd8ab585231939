import math

import numpy as np
import pytest

from frcnet.network import forward_batch, init_network
from frcnet.oscillator import NyquistError, SystemParams
from frcnet.trainer import (BruCurriculum, ModelSpec, SampleSet, TrainingConfig,
                            TrainingDivergence, build_samples, curriculum_forcings,
                            equilibrium_pair, fit_normalization, fit_system,
                            generate_curriculum, l1_loss, make_targets, train)

LS1 = SystemParams(0.2, 1.0)


def test_curriculum_draws_inside_band_and_cells():
    cur = BruCurriculum(band_lo=0.8, band_hi=1.5, n_trajectories=10, ic_range=(0.0, 1.0), seed=4)
    omegas, ics = curriculum_forcings(cur)
    assert all(0.8 <= w <= 1.5 for w in omegas)
    mags = [math.hypot(*ic) for ic in ics]
    for i, m in enumerate(mags):
        assert i / 10 <= m <= (i + 1) / 10 + 1e-12
    assert curriculum_forcings(cur) == (omegas, ics)


def test_curriculum_validation():
    with pytest.raises(ValueError):
        BruCurriculum(band_lo=1.5, band_hi=0.8)
    with pytest.raises(ValueError):
        BruCurriculum(sample_fraction=0.0)
    with pytest.raises(NyquistError):
        generate_curriculum(BruCurriculum(band_lo=1.0, band_hi=400.0), LS1)


def test_targets_are_free_field():
    cur = BruCurriculum(n_trajectories=2, horizon=1.0)
    trajs = generate_curriculum(cur, LS1)
    s = make_targets(trajs[0], "V3", LS1)
    A = LS1.system_matrix
    np.testing.assert_allclose(s.targets, s.states @ A.T, atol=1e-14)
    # difference-based accelerations agree away from the ends
    s2 = make_targets(trajs[0], "V3", None)
    assert np.max(np.abs(s2.targets[2:-2] - s.targets[2:-2])) < 1e-3


def test_v1_targets_keep_forcing():
    trajs = generate_curriculum(BruCurriculum(n_trajectories=1, horizon=1.0), LS1)
    s = make_targets(trajs[0], "V1", LS1)
    assert s.u is not None and s.t is not None
    np.testing.assert_allclose(s.targets[:, 1] - s.u, s.states @ LS1.system_matrix[1], atol=1e-14)


def test_sample_fraction():
    trajs = generate_curriculum(BruCurriculum(n_trajectories=3, horizon=1.0), LS1)
    s = build_samples(trajs, "V3", LS1, 0.5, 0)
    assert len(s) == 3 * int(0.5 * len(trajs[0]))


def test_normalization_span():
    x = np.array([[0.0, 0.0], [2.0, 4.0]])
    norm = fit_normalization(SampleSet(x, x), span=10.0)
    np.testing.assert_allclose(norm.state_shift, [1.0, 2.0])
    np.testing.assert_allclose(norm.state_scale, [10.0, 20.0])
    np.testing.assert_allclose(norm.out_scale, [2.0, 4.0])


def test_l1_loss():
    assert l1_loss([1.0, -1.0], [0.0, 0.0]) == 1.0
    with pytest.raises(ValueError):
        l1_loss([1.0], [1.0, 2.0])


def test_training_reduces_loss_and_is_deterministic():
    cur = BruCurriculum(n_trajectories=4, horizon=2.0)
    spec = ModelSpec(latent_dim=8, hidden_widths=(16,))
    cfg = TrainingConfig(epochs=5)
    net, recs, fresh = fit_system(LS1, cur, spec, cfg)
    assert len(recs) == 5 and recs[-1].loss < recs[0].loss
    assert [r.epoch for r in recs] == [1, 2, 3, 4, 5]
    net2, recs2, _ = fit_system(LS1, cur, spec, cfg)
    assert recs == recs2
    x = np.random.default_rng(0).normal(size=(4, 2))
    assert np.array_equal(forward_batch(net, x), forward_batch(net2, x))
    # the fresh network is not mutated
    assert not np.array_equal(forward_batch(fresh, x), forward_batch(net, x))


def test_zero_epochs_returns_input():
    trajs = generate_curriculum(BruCurriculum(n_trajectories=1, horizon=1.0), LS1)
    s = build_samples(trajs, "V3", LS1, 1.0, 0)
    net = init_network("V3", 4, (4,))
    out, recs = train(net, s, TrainingConfig(epochs=0))
    assert out is net and recs == []


def test_divergence_raises_with_records():
    trajs = generate_curriculum(BruCurriculum(n_trajectories=1, horizon=1.0), LS1)
    s = build_samples(trajs, "V3", LS1, 1.0, 0)
    s.targets[0, 0] = np.inf
    with pytest.raises(TrainingDivergence) as exc:
        train(init_network("V3", 4, (4,)), s, TrainingConfig(epochs=3))
    assert exc.value.records == []


def test_equilibrium_pair_of_linear_field():
    from frcnet.network import OperatorNetwork
    re, im = equilibrium_pair(OperatorNetwork.linear(LS1.system_matrix))
    assert re == pytest.approx(-0.2)
    assert im == pytest.approx(math.sqrt(0.96))
