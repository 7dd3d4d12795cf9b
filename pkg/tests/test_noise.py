import numpy as np
import pytest

from mvfilter.noise_utils import IncrementStream, NoisePlan, StreamId, make_grid, sample_brownian


def test_grid_requires_integer_ratio():
    grid = make_grid(1.0, 0.25)
    assert grid.n_steps == 4
    assert grid.times[-1] == 1.0
    assert make_grid(1.0, 1e-3).n_steps == 1000
    with pytest.raises(ValueError):
        make_grid(1.0, 0.3)
    with pytest.raises(ValueError):
        make_grid(1.0, 2.0)
    with pytest.raises(ValueError):
        make_grid(0.0, 0.1)


def test_streams_are_reproducible_and_distinct():
    plan = NoisePlan(master_seed=3)
    first = plan.generator(StreamId('signal', 1, 4)).standard_normal(8)
    again = NoisePlan(master_seed=3).generator(StreamId('signal', 1, 4)).standard_normal(8)
    np.testing.assert_array_equal(first, again)

    for other in (StreamId('signal', 1, 5), StreamId('signal', 2, 4), StreamId('law', 1, 4)):
        assert not np.array_equal(first, plan.generator(other).standard_normal(8))
    assert not np.array_equal(first, NoisePlan(master_seed=4).generator(StreamId('signal', 1, 4)).standard_normal(8))


def test_plan_rejects_bad_seeds():
    with pytest.raises(ValueError):
        NoisePlan(master_seed=-1)
    with pytest.raises(ValueError):
        NoisePlan(master_seed=1.5)
    with pytest.raises(ValueError):
        NoisePlan().seed_sequence(StreamId('signal', -1, 0))


def test_increment_stream_draws_from_the_particle_streams():
    plan = NoisePlan(master_seed=11)
    dt = 0.01
    stream = IncrementStream(plan, 'signal', 2, n_particles=5, dim=2, dt=dt)
    steps = np.array([stream.next().copy() for _ in range(3)])        # (3, 5, 2)

    expected = plan.generator(StreamId('signal', 2, 3)).standard_normal((3, 2)) * np.sqrt(dt)
    np.testing.assert_array_equal(steps[:, 3, :], expected)


def test_adding_particles_leaves_existing_draws_unchanged():
    plan = NoisePlan(master_seed=11)
    small = IncrementStream(plan, 'signal', 0, n_particles=3, dim=1, dt=0.1)
    large = IncrementStream(plan, 'signal', 0, n_particles=50, dim=1, dt=0.1)
    for _ in range(40):
        np.testing.assert_array_equal(small.next(), large.next()[:3])


def test_brownian_path_shape_and_scale():
    grid = make_grid(10.0, 1e-3)
    path = sample_brownian(grid, 1, NoisePlan(0), StreamId('obs'))
    assert path.values.shape == (10_001, 1)
    assert path.values[0, 0] == 0.0
    increments = path.increments[:, 0]
    assert increments.var() == pytest.approx(1e-3, rel=0.05)
    with pytest.raises(ValueError):
        sample_brownian(grid, 0, NoisePlan(0), StreamId('obs'))


def test_signal_and_observation_streams_are_uncorrelated():
    plan = NoisePlan(5)
    dt = 1e-2
    n = 20_000
    signal = IncrementStream(plan, 'signal', 0, n_particles=1, dim=1, dt=dt)
    B = np.array([signal.next()[0, 0] for _ in range(n)])
    W = sample_brownian(make_grid(n * dt, dt), 1, plan, StreamId('obs')).increments[:, 0]
    assert abs(np.corrcoef(B, W)[0, 1]) < 4.0 / np.sqrt(n)


def test_brownian_increment_variance_on_a_million_steps():
    grid = make_grid(1000.0, 1e-3)
    increments = sample_brownian(grid, 1, NoisePlan(0), StreamId('obs')).increments[:, 0]
    assert increments.size == 1_000_000
    assert abs(np.mean(increments ** 2) / grid.dt - 1.0) <= 3.0 * np.sqrt(2.0 / 1_000_000)
