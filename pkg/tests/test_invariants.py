import numpy as np
import pytest

import invariants

SLOW_CHECKS = {"lindblad_physicality", "gram_invariants", "rotation_symmetry", "dt_refinement"}


def test_costly_checks_are_flagged_slow():
    assert {name for name, _, slow in invariants.CHECKS if slow} == SLOW_CHECKS


def test_fast_run_skips_slow_checks(monkeypatch):
    monkeypatch.setattr(invariants, "CHECKS", [
        (name, (lambda rng: (True, "")), slow) for name, _, slow in invariants.CHECKS
    ])
    names = {r.name for r in invariants.run_checks(include_slow=False)}
    assert names.isdisjoint(SLOW_CHECKS)
    assert {r.name for r in invariants.run_checks()} >= SLOW_CHECKS


def test_smo_oracle_covers_fifty_instances():
    passed, detail = invariants.check_smo_oracle(np.random.default_rng(0))
    assert passed
    assert detail.startswith("50 instances")


@pytest.mark.slow
def test_gram_invariants_over_twenty_grams():
    passed, detail = invariants.check_gram_invariants(np.random.default_rng(0))
    assert passed, detail
    assert detail.startswith("20 Grams")


@pytest.mark.slow
def test_lindblad_physicality_over_twenty_draws():
    passed, detail = invariants.check_lindblad_physicality(np.random.default_rng(0))
    assert passed, detail
    assert detail.startswith("20 draws")


@pytest.mark.slow
@pytest.mark.parametrize("name", ["rotation_symmetry", "dt_refinement"])
def test_label_stability_checks(name):
    (result,) = invariants.run_checks(names=[name])
    assert result.passed, result.detail
