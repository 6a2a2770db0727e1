import math

import numpy as np
import pytest

from cnnadapt import ConfigError, preset
from cnnadapt.presets import PRESET_NAMES
from cnnadapt.scenario import emit_scenario, load_scenario, output_stem


FULL_DOC = """
name = "custom"

[network]
input_rows = 10
input_cols = 6
conv_layers = [[5, 6, 2], [3, 2, 2]]
fc_widths = [8, 8, 2]
alpha1 = 100.0
alpha2 = 0.01
stack_dt = 0.1

[controller]
k_s = 1.0
a_c = -10.0
rho = 1e5
gamma = 2e6
theta_bar = 14.0

[sim]
dt = 0.001
t_end = 1.0
seed = 3
x0 = [1.0, 2.0]
"""


def write(tmp_path, text, name="scenario.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoad:
    def test_full_document(self, tmp_path):
        sc = load_scenario(write(tmp_path, FULL_DOC))
        assert sc.name == "custom"
        assert sc.network.weight_count() == 238
        assert sc.controller.gamma_fc == 2e6
        assert sc.controller.theta_bar == 14.0
        np.testing.assert_array_equal(sc.controller.A_c, -10.0 * np.eye(2))
        assert sc.stack_dt == 0.1
        assert sc.sim.seed == 3
        assert math.isinf(sc.plant.t_g)

    def test_preset_reference_with_override(self, tmp_path):
        doc = 'preset = "cnn1"\n\n[sim]\nseed = 11\n\n[controller]\nk_s = 2.0\n'
        sc = load_scenario(write(tmp_path, doc))
        assert sc.name == "cnn1"
        assert sc.sim.seed == 11
        assert sc.controller.k_s == 2.0
        # untouched fields inherit the preset
        base = preset("cnn1")
        assert sc.controller.rho == base.controller.rho
        assert sc.network == base.network

    def test_every_preset_loads_from_reference_file(self, tmp_path):
        for name in PRESET_NAMES:
            sc = load_scenario(write(tmp_path, f'preset = "{name}"\n',
                                     f"{name}.toml"))
            assert sc.name == name

    def test_unknown_top_key(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown top-level"):
            load_scenario(write(tmp_path, 'preset = "cnn1"\nbogus = 1\n'))

    def test_unknown_section_key(self, tmp_path):
        doc = 'preset = "cnn1"\n\n[sim]\ntimestep = 0.1\n'
        with pytest.raises(ConfigError, match="sim.timestep"):
            load_scenario(write(tmp_path, doc))

    def test_unknown_preset(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown preset"):
            load_scenario(write(tmp_path, 'preset = "cnn9"\n'))

    def test_missing_required_sections(self, tmp_path):
        with pytest.raises(ConfigError, match="missing"):
            load_scenario(write(tmp_path, 'name = "x"\n'))

    def test_non_hurwitz_rejected(self, tmp_path):
        doc = FULL_DOC.replace("a_c = -10.0", "a_c = 10.0")
        with pytest.raises(ConfigError):
            load_scenario(write(tmp_path, doc))

    def test_grid_mismatch_rejected(self, tmp_path):
        doc = FULL_DOC.replace("stack_dt = 0.1", "stack_dt = 0.0015")
        doc = doc.replace("dt = 0.001", "dt = 0.001")
        with pytest.raises(ConfigError, match="stack_dt"):
            load_scenario(write(tmp_path, doc))

    def test_gamma_conflict_rejected(self, tmp_path):
        doc = FULL_DOC.replace("gamma = 2e6", "gamma = 2e6\ngamma_fc = 1.0")
        with pytest.raises(ConfigError, match="gamma"):
            load_scenario(write(tmp_path, doc))

    def test_parse_error_carries_path(self, tmp_path):
        path = write(tmp_path, "this is not toml [")
        with pytest.raises(ConfigError, match="TOML parse error"):
            load_scenario(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_scenario(tmp_path / "absent.toml")

    def test_disturbance_time(self, tmp_path):
        doc = 'preset = "cnn1"\n\n[plant]\ndisturbance_time = 3.0\n'
        sc = load_scenario(write(tmp_path, doc))
        assert sc.plant.t_g == 3.0

    def test_per_segment_gamma(self, tmp_path):
        doc = FULL_DOC.replace("gamma = 2e6",
                               "gamma_fc = 2e6\ngamma_conv = 3e6")
        sc = load_scenario(write(tmp_path, doc))
        assert sc.controller.gamma_fc == 2e6
        assert sc.controller.gamma_conv == 3e6


class TestRoundTrip:
    @pytest.mark.parametrize("name", PRESET_NAMES)
    def test_presets_round_trip_exactly(self, name, tmp_path):
        sc = preset(name)
        first = emit_scenario(sc)
        path = write(tmp_path, first, f"{name}.toml")
        again = emit_scenario(load_scenario(path))
        assert first == again

    def test_custom_round_trip(self, tmp_path):
        sc = load_scenario(write(tmp_path, FULL_DOC))
        text = emit_scenario(sc, stem="custom")
        sc2 = load_scenario(write(tmp_path, text, "emitted.toml"))
        assert emit_scenario(sc2, stem="custom") == text

    def test_output_stem(self, tmp_path):
        path = write(tmp_path, 'preset = "cnn1"\n\n[output]\nstem = "runA"\n')
        sc = load_scenario(path)
        assert output_stem(path, sc) == "runA"
        path2 = write(tmp_path, 'preset = "cnn1"\n', "two.toml")
        assert output_stem(path2, load_scenario(path2)) == "two"
