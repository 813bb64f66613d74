import pytest

import config
from core.errors import GabpNotConvergedError
from core.models import LoadingMode
from dataset_repository import make_two_gaussians
from tools import reproduce_uci


def _data():
    return make_two_gaussians(120, seed=11)


def test_reproduce_picks_the_best_validation_point():
    result = reproduce_uci.reproduce(_data(), "pageblocks", gammas=(1.0,), costs=(0.01, 0.1))
    assert result["n"] == 120
    assert result["reference_error_percent"] == 3.86
    assert result["tolerance_percent"] == config.REPRODUCTION_TOLERANCE["pageblocks"]
    assert result["within_tolerance"] == (result["test_error_percent"] <= result["tolerance_percent"])
    assert result["test_error_percent"] < 10.0

    trials = result["trials"]
    assert [(t["gamma"], t["cost_C"]) for t in trials] == [(1.0, 0.01), (1.0, 0.1)]
    assert trials[0]["loading_mode"] == "one_over_c"
    scored = [t for t in trials if "validation_error" in t]
    best = min(scored, key=lambda t: t["validation_error"])
    assert (result["selected"]["gamma"], result["selected"]["cost_C"]) == (best["gamma"], best["cost_C"])
    # 24 点のテスト側（80/20）
    assert result["report"]["n_test"] == 24


def test_reproduce_rejects_grids_over_25_points():
    with pytest.raises(ValueError, match="at most 25"):
        reproduce_uci.reproduce(_data(), "pageblocks", gammas=(0.1, 0.5, 1.0, 2.0, 5.0, 10.0), costs=(0.01, 0.1, 1.0, 10.0, 100.0))


def test_reproduce_falls_back_to_enforce_dominance(monkeypatch):
    real_train = reproduce_uci.train
    modes = []

    def flaky_train(points, cfg):
        modes.append(cfg.loading_mode)
        if cfg.loading_mode == LoadingMode.ONE_OVER_C:
            raise GabpNotConvergedError("not converged")
        return real_train(points, cfg)

    monkeypatch.setattr(reproduce_uci, "train", flaky_train)
    result = reproduce_uci.reproduce(_data(), "pageblocks", gammas=(1.0,), costs=(0.01,))
    assert result["selected"]["loading_mode"] == "enforce_dominance"
    assert result["trials"][0]["loading_mode"] == "enforce_dominance"
    assert modes == [LoadingMode.ONE_OVER_C, LoadingMode.ENFORCE_DOMINANCE] * 2


def test_reproduce_fails_when_nothing_converges(monkeypatch):
    def never(points, cfg):
        raise GabpNotConvergedError("not converged")

    monkeypatch.setattr(reproduce_uci, "train", never)
    with pytest.raises(RuntimeError, match="no \\(gamma, C\\) combination converged"):
        reproduce_uci.reproduce(_data(), "pageblocks", gammas=(1.0,), costs=(0.01, 0.1))


def test_unknown_dataset_has_no_reference_or_verdict():
    result = reproduce_uci.reproduce(_data(), "mystery", gammas=(1.0,), costs=(0.01,))
    assert result["reference_error_percent"] is None
    assert result["tolerance_percent"] is None
    assert result["within_tolerance"] is None


def test_catalog_lookup_normalises_names():
    assert config.catalog_reference("Page_Blocks")[3] == 3.86
    assert config.catalog_reference("nope") is None
