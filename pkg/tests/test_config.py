import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from foamlab.config import (
    RunConfig,
    cell_counts,
    config_from_dict,
    config_to_dict,
    dump_config,
    dumps_config,
    load_config,
    loads_config,
    preset,
    preset_names,
    to_cells,
)
from foamlab.errors import ConfigurationError

FIXED = [n for n in preset_names() if "<" not in n]


@pytest.mark.parametrize("name", FIXED + ["fig2-2d-n5", "fig9-3d-n12"])
def test_presets_round_trip(name, tmp_path):
    cfg = preset(name)
    text = dumps_config(cfg)
    again = loads_config(text)
    assert again == cfg
    assert dumps_config(again) == text
    dump_config(cfg, tmp_path / "c.json")
    assert load_config(tmp_path / "c.json") == cfg


def test_dump_expands_every_default():
    data = json.loads(dumps_config(preset("fig1-2d-n12")))
    for key in ("version", "grid", "tau", "auction", "seed", "volumes", "search", "output", "max_iters"):
        assert key in data
    assert set(data["auction"]) == {"eps0", "alpha", "eps_min", "price_rule", "max_bids_per_cell"}
    assert data["seed"]["rng_seed"] == 0


def test_minimal_file_gets_defaults():
    cfg = loads_config(json.dumps({"version": 1, "volumes": [1.0, 1.0]}))
    assert cfg.grid.dims == [256, 256]
    assert cfg.tau == 0.0625
    assert config_from_dict(config_to_dict(cfg)) == cfg


@pytest.mark.parametrize(
    "data",
    [
        {"volumes": [1.0]},
        {"version": 2, "volumes": [1.0]},
        {"version": 1},
        {"version": 1, "volumes": []},
        {"version": 1, "volumes": [1.0, -0.5]},
        {"version": 1, "volumes": [1.0], "colour": "blue"},
        {"version": 1, "volumes": [1.0], "grid": {"dims": [64, 64, 64], "lengths": [1.0, 1.0]}},
        {"version": 1, "volumes": [1.0], "grid": {"dims": [64], "lengths": [1.0]}},
        {"version": 1, "volumes": [1.0], "output": {"format": "png"}},
        {"version": 1, "volumes": [1.0], "output": {"format": "vtk"}},
        {"version": 1, "volumes": [1.0], "tau": -1.0},
        {"version": 1, "volumes": [1.0], "auction": {"price_rule": "mid"}},
        {"version": 1, "volumes": [1.0], "seed": {"rng_algorithm": "mt19937"}},
        {"version": 1, "volumes": [100.0]},
    ],
)
def test_invalid_configs(data):
    with pytest.raises(ConfigurationError):
        config_from_dict(data)


def test_bad_json():
    with pytest.raises(ConfigurationError):
        loads_config("{version: 1")


def test_largest_remainder_rounding():
    assert cell_counts([1.25, 1.25, 1.5], 0.5) == [3, 2, 3]
    # ties go to the lower bubble index
    assert cell_counts([0.75, 0.75], 0.5) == [2, 1]
    assert cell_counts([], 1.0) == []
    with pytest.raises(ConfigurationError):
        cell_counts([0.1, 5.0], 1.0)
    assert to_cells(0.01, 1.0) == 1
    assert to_cells(2.6, 1.0) == 3


@settings(max_examples=100, deadline=None)
@given(vols=st.lists(st.floats(0.5, 50.0), min_size=1, max_size=15), h=st.floats(0.05, 0.5))
def test_rounding_preserves_total(vols, h):
    cv = h * h
    counts = cell_counts(vols, cv)
    ideal = np.asarray(vols) / cv
    assert sum(counts) == round(ideal.sum())
    assert np.all(np.abs(np.asarray(counts) - ideal) < 1.0)


def test_targets_fill_the_grid():
    cfg = preset("fig7-2d-hysteresis")
    t = cfg.targets()
    assert sum(t.counts) == cfg.geom().n_cells
    assert len(t.counts) == 8


def test_paper_values_in_presets():
    fig7 = preset("fig7-2d-hysteresis")
    assert fig7.volumes == [0.677] * 6 + [0.0201]
    assert fig7.flow.dV == 0.00496 and fig7.flow.v_start == 0.0201
    assert fig7.flow.direction == "up-down" and fig7.flow.target == 7
    for variant in ("top", "bottom"):
        fig6 = preset(f"fig6-2d-{variant}")
        assert fig6.volumes[0] == 0.4
        assert (fig6.flow.dV, fig6.flow.v_start, fig6.flow.v_end) == (0.004, 0.016, 0.4)
        assert len(fig6.flow.insertions) == 3
    assert preset("fig8-2d-middle").volumes == [0.1474] * 7
    assert preset("fig8-2d-middle").flow.target == "interior"
    assert preset("fig8-2d-border").flow.target == "border"
    assert len(preset("fig1-2d-n12").volumes) == 12
    assert preset("fig3-2d-n16").search.restarts == 50
    assert preset("fig2-2d-n7").search.restarts == 20
    assert preset("fig9-3d-n11").search.restarts == 10
    assert preset("fig10-3d-n8").search.restarts == 100
    assert preset("fig5-3d-n8").grid.dims == [96, 96, 96]


def test_presets_stay_out_of_the_small_bubble_regime():
    from foamlab.engine import small_bubbles
    from foamlab.field import Kernel

    for name in FIXED + ["fig2-2d-n6"]:
        cfg = preset(name)
        if cfg.flow is not None:
            continue  # ramps start small on purpose
        assert small_bubbles(cfg.targets(), Kernel(cfg.geom(), cfg.tau)) == []


def test_unknown_preset():
    with pytest.raises(ConfigurationError):
        preset("fig4-2d")
    with pytest.raises(ConfigurationError):
        preset("fig2-2d-n0")


def test_sim_params_follow_the_config():
    cfg = RunConfig(volumes=[1.0], tau=0.03, max_iters=7)
    p = cfg.sim_params()
    assert p.tau == 0.03 and p.max_iters == 7
    assert math.isclose(cfg.geom().lengths[0], 2 * math.pi)
