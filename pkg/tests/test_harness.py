import math

import numpy as np
import pytest

from affinestab.harness import (CSV_COLUMNS, DEFAULT_VALUES, ExperimentConfig, SubregularityRecord,
                                load_config, manufactured_errors, parse_config, records_to_csv, rho_shape,
                                run, structural_k_star, verdict_from_csv)
from affinestab.grid import GridSpec, ScalarField

from conftest import loglog_slope

SMALL = dict(grids=(33,), values=tuple(np.geomspace(1e-1, 1e-3, 5).tolist()))


def test_parse_config_full():
    cfg = parse_config("""
        # comment line
        experiment = rho-sweep
        preset = cubic-monotone   # trailing comment
        grid = 17, 33
        values = geomspace(1e-1, 1e-3, 3)
        seed = 7
        gap_tol = 1e-9
        rho_shape = random
        preset.gamma = 0.7
    """)
    assert cfg.experiment == "rho-sweep" and cfg.preset == "cubic-monotone"
    assert cfg.grids == (17, 33) and cfg.grid == 33
    assert cfg.values == pytest.approx((1e-1, 1e-2, 1e-3))
    assert cfg.seed == 7 and cfg.gap_tol == 1e-9 and cfg.rho_shape == "random"
    assert cfg.preset_params == {"gamma": 0.7}
    assert cfg.problem(9).params["gamma"] == 0.7


def test_parse_config_errors_and_overrides(tmp_path):
    with pytest.raises(ValueError, match="unknown key"):
        parse_config("experiment = solve\ncolour = red")
    with pytest.raises(ValueError, match="experiment"):
        parse_config("seed = 1")
    with pytest.raises(ValueError):
        parse_config("experiment = solve\nbroken line")
    with pytest.raises(ValueError):
        parse_config("experiment = solve\ngrid = 33, 17")
    with pytest.raises(ValueError):
        parse_config("experiment = rho-sweep\nvalues = 0.1, -0.1")
    path = tmp_path / "c.cfg"
    path.write_text("experiment = tikhonov-sweep\nseed = 1\n")
    cfg = load_config(path, seed=5, preset=None)
    assert cfg.seed == 5 and cfg.values == DEFAULT_VALUES["tikhonov-sweep"]


def test_default_sweeps_meet_size_requirements():
    eps = DEFAULT_VALUES["tikhonov-sweep"]
    assert len(eps) >= 6 and max(eps) == pytest.approx(1e-1) and min(eps) == pytest.approx(1e-4)
    rho = DEFAULT_VALUES["rho-sweep"]
    assert math.log10(max(rho) / min(rho)) == pytest.approx(2.0)


def test_subregularity_record_kappa():
    r = SubregularityRecord(1e-2, 1e-2, 3e-2, 1e-3, 2e-3, k_star=1)
    assert r.psi_distance == pytest.approx(3.3e-2)
    assert r.implied_kappa == pytest.approx(3.3)
    r2 = SubregularityRecord(1e-2, 1e-4, 1e-2, 0, 0, k_star=2)
    assert r2.implied_kappa == pytest.approx(1.0)
    assert SubregularityRecord(0, 0, 0, 0, 0, 1).implied_kappa == 0.0


def test_csv_round_trip_verdict():
    sizes = np.geomspace(1e-1, 1e-3, 5)
    recs = [SubregularityRecord(s, s, 2 * s, 0.0, 0.0, 1, control_only=True) for s in sizes]
    text = records_to_csv(recs, {"k_star": 1, "distance": "u_dist_L1", "seed": 0})
    lines = text.splitlines()
    assert lines[0] == "# distance=u_dist_L1"
    assert lines[3] == ",".join(CSV_COLUMNS)
    verdict, report, info = verdict_from_csv(text)
    assert verdict == "PASS" and report.exponent == pytest.approx(1.0)
    bad = [SubregularityRecord(s, s, 2 * s ** 0.3, 0.0, 0.0, 1, control_only=True) for s in sizes]
    assert verdict_from_csv(records_to_csv(bad, {"distance": "u_dist_L1"}))[0] == "FAIL"


def test_vacuous_rate_when_distances_vanish():
    recs = [SubregularityRecord(s, s, 0.0, 0.0, 0.0, 1) for s in (1e-1, 1e-2)]
    assert verdict_from_csv(records_to_csv(recs, {}))[0] == "vacuous rate"


def test_vacuous_sweep_with_dominant_offset():
    """s0 = 10: every small rho leaves u_bar = b1 unchanged, so the rate is vacuous."""
    cfg = ExperimentConfig("rho-sweep", preset_params={"s0": 10.0}, **SMALL)
    res = run(cfg)
    assert res.verdict == "vacuous rate"
    assert res.passed


def test_structural_k_star_fallback():
    g = GridSpec.square(17)
    k, info = structural_k_star(ScalarField.constant(g, 1.0))
    assert k == 1 and info["structural"].startswith("vacuous")


def test_rho_shape():
    g = GridSpec.square(9)
    assert np.all(rho_shape(g, "constant", 0) == 1.0)
    r = rho_shape(g, "random", 3)
    np.testing.assert_array_equal(r, rho_shape(g, "random", 3))
    assert np.max(np.abs(r)) == pytest.approx(1.0)


@pytest.mark.parametrize("experiment", ["tikhonov-sweep", "rho-sweep"])
def test_sweep_on_small_grid_passes(experiment):
    res = run(ExperimentConfig(experiment, **SMALL))
    assert res.verdict == "PASS", res.details
    assert verdict_from_csv(res.csv_text)[0] == res.verdict
    assert len(res.records) == len(SMALL["values"])


def test_zeta_sweep_state_shift_family():
    res = run(ExperimentConfig("zeta-sweep", preset="cubic-monotone", family="state-shift",
                               grids=(33,), values=tuple(np.geomspace(1e-2, 1e-4, 5).tolist())))
    assert res.verdict == "PASS", res.details
    sizes = [r.zeta_size for r in res.records]
    assert sizes == sorted(sizes, reverse=True)


def test_worker_count_does_not_change_csv():
    a = run(ExperimentConfig("rho-sweep", rho_shape="random", **SMALL))
    b = run(ExperimentConfig("rho-sweep", rho_shape="random", workers=3, **SMALL))
    assert a.csv_text == b.csv_text


def test_diagnostics_report():
    res = run(ExperimentConfig("diagnostics", grids=(33,), n_starts=2))
    assert res.verdict == "PASS", res.details
    assert res.details["coercivity"] == "coercive"
    assert res.details["lambda_identity_rel_err"] <= 1e-9
    assert res.csv_text.startswith("key,value\n")


@pytest.mark.parametrize("preset", ["linear-tracking", "cubic-monotone", "bilinear-cost"])
def test_manufactured_second_order(preset):
    ns = (17, 33, 65)
    errs = [max(manufactured_errors(n, preset)) for n in ns]
    assert loglog_slope([1 / (n - 1) for n in ns], errs) >= 1.8


def test_manufactured_constant_is_exact():
    res = run(ExperimentConfig("convergence", grids=(9, 17, 33), manufactured="constant"))
    assert res.verdict == "exact"


def test_convergence_needs_three_grids():
    from affinestab.errors import InsufficientDataError
    with pytest.raises(InsufficientDataError):
        run(ExperimentConfig("convergence", grids=(17, 33)))


def test_result_write(tmp_path):
    res = run(ExperimentConfig("convergence", grids=(9, 17, 33)))
    path = res.write(tmp_path / "out")
    assert path.name == "convergence.csv" and path.read_text() == res.csv_text
