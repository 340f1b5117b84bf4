import math

import numpy as np
import pytest

from dynamics import make_grid
from invariants import rotate_field
from models import DriveSpec, FieldVector, NoiseSpec, ProbabilityPair
from singularity import (
    critical_time,
    default_window,
    detect_crossings,
    ground_probabilities,
    label_field,
    probability_evaluator,
    quench_trajectory,
    rate_function,
    trace_table,
)
from spin_model import build_hamiltonian, manifold_states
from validation import ValidationError


def _pair(p_plus, p_minus, grid, n_qubits=2):
    return ProbabilityPair(grid=grid, p_plus=p_plus, p_minus=p_minus, n_qubits=n_qubits)


def test_crossings_of_a_sine_are_found_near_multiples_of_pi():
    grid = make_grid(10.0, 1000)
    s = np.sin(grid.times)
    report = detect_crossings(_pair(0.25 + 0.25 * s, 0.25 - 0.25 * s, grid))
    assert report.label == 1
    assert report.crossing_times == pytest.approx([math.pi, 2 * math.pi, 3 * math.pi], abs=1e-6)
    # df/dt = -0.5 at t = pi with P = 0.25 and N = 2
    assert report.kink_jumps[0] == pytest.approx(1.0, rel=1e-3)
    assert report.kink_jumps[1] == pytest.approx(-1.0, rel=1e-3)


def test_tangential_touch_is_not_a_crossing():
    grid = make_grid(10.0, 1000)
    touch = 0.25 + 0.25 * np.sin(grid.times) ** 2
    report = detect_crossings(_pair(touch, np.full_like(touch, 0.25), grid))
    assert report.label == -1
    assert report.crossing_times == []


def test_identical_probabilities_have_no_crossing():
    grid = make_grid(5.0, 100)
    p = np.full(grid.times.size, 0.5)
    assert detect_crossings(_pair(p, p, grid)).label == -1


def test_rate_function():
    grid = make_grid(1.0, 2)
    pair = _pair(np.array([1.0, 0.5, 0.0]), np.array([0.0, 0.25, 0.0]), grid)
    lam = rate_function(pair)
    assert lam[0] == 0.0
    assert lam[1] == pytest.approx(math.log(2.0) / 2.0)
    # log floor keeps the P = 0 endpoint finite
    assert np.isfinite(lam[2])
    assert rate_function(pair, n_qubits=1)[1] == pytest.approx(math.log(2.0))
    with pytest.raises(ValidationError):
        rate_function(pair, n_qubits=0)


def test_default_window():
    grid = default_window(1.0, 1.0)
    assert grid.t_end == pytest.approx(100.0 * (math.pi / 4.0 + 1.0))
    assert grid.n_steps == math.ceil(grid.t_end / 0.01)
    assert default_window(1.0, 0.5).t_end > grid.t_end
    with pytest.raises(ValidationError):
        default_window(1.0, 0.0)


def test_critical_time_without_field_is_zero(n2_config):
    traj = quench_trajectory(n2_config, FieldVector(h=0.0), "closed", grid=make_grid(5.0, 50))
    t_c, m_x = critical_time(traj, n2_config)
    assert t_c == 0.0
    assert m_x == pytest.approx(-1.0)


def test_critical_time_is_earliest_maximum(n2_config, regular_field):
    traj = quench_trajectory(n2_config, regular_field, "closed", grid=make_grid(20.0, 2000))
    table = trace_table(n2_config, regular_field, grid=make_grid(20.0, 2000))
    t_c, m_x = critical_time(traj, n2_config)
    assert m_x == pytest.approx(table["m_x"].max(), abs=1e-12)
    assert t_c == table["t"][int(np.argmax(table["m_x"]))]


def test_reference_quenches_are_labelled(n2_config, singular_field, regular_field):
    singular = label_field(n2_config, singular_field)
    regular = label_field(n2_config, regular_field)
    assert singular.label == 1
    assert len(singular.crossing_times) >= 1
    assert all(t > 0 for t in singular.crossing_times)
    assert regular.label == -1


def test_zero_field_is_labelled_regular(n2_config):
    report = label_field(n2_config, FieldVector(h=0.0))
    assert report.label == -1
    assert report.crossing_times == []


def test_missing_mode_parameters_are_rejected(n2_config, singular_field):
    with pytest.raises(ValidationError):
        label_field(n2_config, singular_field, mode="driven")
    with pytest.raises(ValidationError):
        label_field(n2_config, singular_field, mode="open", extras=DriveSpec(amplitude=0.1, frequency=1.0))


def test_open_mode_labels_with_mixed_trajectory(n2_config, singular_field):
    report = label_field(
        n2_config, singular_field, mode="open", extras=NoiseSpec(channel="phase_damping", rate=0.0)
    )
    assert report.label == label_field(n2_config, singular_field).label


def test_exact_evaluator_matches_sampled_probabilities(n2_config, singular_field):
    g_plus, g_minus = manifold_states(n2_config)
    grid = make_grid(10.0, 1000)
    pair = ground_probabilities(quench_trajectory(n2_config, singular_field, "closed", grid=grid), g_plus, g_minus)
    evaluate = probability_evaluator(build_hamiltonian(n2_config, singular_field), g_minus, g_plus, g_minus)
    sampled = pair.p_plus - pair.p_minus
    for k in (0, 137, 500, 1000):
        assert evaluate(grid.times[k]) == pytest.approx(sampled[k], abs=1e-10)


def test_probabilities_stay_in_unit_interval(n2_config, singular_field):
    table = trace_table(n2_config, singular_field, grid=make_grid(30.0, 3000))
    for column in ("P_plus", "P_minus"):
        assert table[column].min() >= 0.0
        assert table[column].max() <= 1.0
    assert (table["P_plus"] + table["P_minus"]).max() <= 1.0 + 1e-9
    assert table["lambda"].min() >= 0.0
    assert table["m_x"][0] == pytest.approx(-1.0)
    assert table["t"].size == 3001


def test_labels_are_invariant_under_rotation_about_x(n2_config, rng):
    for _ in range(5):
        field = FieldVector(h=float(rng.uniform(0.5, 1.5)), theta=float(rng.uniform(0, 2 * math.pi)),
                            phi=float(rng.uniform(0, math.pi)))
        rotated = rotate_field(field, [1.0, 0.0, 0.0], float(rng.uniform(0, 2 * math.pi)))
        assert rotated.h == pytest.approx(field.h)
        assert label_field(n2_config, field).label == label_field(n2_config, rotated).label
