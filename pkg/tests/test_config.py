"""YAML config parsing: strict keys, value forms, and path resolution."""

import math
from pathlib import Path

import numpy as np
import pytest

from mpswarm.config import (
    ConfigError,
    circle_layout,
    load_library_spec,
    load_scenario,
    load_yaml,
    parse_library_spec,
    parse_scenario,
)

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

LIB_CONFIGS = sorted(CONFIG_DIR.glob("lib*.yaml"))
SCENARIO_CONFIGS = [
    CONFIG_DIR / name
    for name in ("circle8.yaml", "circle50.yaml", "clutter_single.yaml", "swap2.yaml")
]


class TestShippedConfigs:
    @pytest.mark.parametrize("path", LIB_CONFIGS, ids=lambda p: p.stem)
    def test_library_configs_parse(self, path):
        spec = load_library_spec(path)
        assert spec.library.length_m > 0
        assert 360.0 % spec.library.rotation_step_deg == 0
        assert spec.params.v_max > 0 and spec.params.a_max > 0
        assert spec.params.stages >= 2
        assert set(spec.occupancy) >= {"s_res", "t_res", "r_infl", "r_robot"}
        # index query distances must be sound: inflation at least the body
        assert spec.occupancy["r_infl"] >= spec.occupancy["r_robot"]

    @pytest.mark.parametrize("path", SCENARIO_CONFIGS, ids=lambda p: p.stem)
    def test_scenario_configs_parse(self, path):
        spec = load_scenario(path)
        assert spec.starts.shape == spec.goals.shape
        assert spec.starts.shape[1] == 3
        assert spec.library_file.parent == CONFIG_DIR  # resolved next to yaml
        assert spec.sim.scheduler in ("deterministic", "threaded")
        if spec.map_spec is not None:
            assert spec.map_spec.n_obstacles > 0

    def test_every_yaml_is_covered(self):
        all_yaml = set(CONFIG_DIR.glob("*.yaml"))
        assert all_yaml == set(LIB_CONFIGS) | set(SCENARIO_CONFIGS)


def _lib_doc(**over):
    doc = {
        "library": {
            "length_m": 2.0,
            "rotation_step_deg": 90.0,
            "arcs": [{"radius_m": 2.0}, {"radius_m": "inf"}],
        },
        "topp": {"v_max": 1.0, "a_max": 3.0, "speed_step": 0.5, "stages": 50},
        "occupancy": {"s_res": 0.2, "t_res": 0.1, "r_inflate": 0.25},
    }
    doc.update(over)
    return doc


class TestLibrarySpec:
    def test_radius_string_forms(self):
        spec = parse_library_spec(_lib_doc())
        assert spec.library.arcs[1].radius_m == math.inf
        for form in ("inf", "Infinity", "straight", " INF "):
            doc = _lib_doc()
            doc["library"]["arcs"][1]["radius_m"] = form
            assert (
                parse_library_spec(doc).library.arcs[1].radius_m == math.inf
            )
        assert parse_library_spec(
            _lib_doc()
        ).library.arcs[0].radius_m == 2.0

    def test_bad_radius_string(self):
        doc = _lib_doc()
        doc["library"]["arcs"][0]["radius_m"] = "curvy"
        with pytest.raises(ConfigError, match="bad arc radius"):
            parse_library_spec(doc)

    def test_occupancy_key_mapping(self):
        spec = parse_library_spec(_lib_doc())
        assert spec.occupancy["r_infl"] == 0.25  # r_inflate -> r_infl
        assert "temporal_pad" not in spec.occupancy  # absent unless given
        doc = _lib_doc()
        doc["occupancy"]["temporal_pad"] = 0.02
        assert parse_library_spec(doc).occupancy["temporal_pad"] == 0.02

    @pytest.mark.parametrize(
        "mutate",
        [
            lambda d: d.update(extra=1),
            lambda d: d["library"].update(color="red"),
            lambda d: d["topp"].update(jerk_max=1.0),
            lambda d: d["occupancy"].update(fidelity=3),
            lambda d: d["library"]["arcs"][0].update(sweep_deg=10),
        ],
    )
    def test_unknown_keys_rejected(self, mutate):
        doc = _lib_doc()
        mutate(doc)
        with pytest.raises(ConfigError, match="unknown keys"):
            parse_library_spec(doc)

    def test_missing_required_key(self):
        doc = _lib_doc()
        del doc["library"]["length_m"]
        with pytest.raises(ConfigError, match="length_m"):
            parse_library_spec(doc)

    def test_invalid_library_values_wrapped(self):
        doc = _lib_doc()
        doc["library"]["rotation_step_deg"] = 70.0  # does not divide 360
        with pytest.raises(ConfigError):
            parse_library_spec(doc)

    def test_defaults_fill_in(self):
        doc = {"library": _lib_doc()["library"]}
        spec = parse_library_spec(doc)
        assert spec.params.v_max == 1.0 and spec.params.stages == 1000
        assert spec.occupancy["s_res"] == 0.1
        assert spec.occupancy["r_robot"] == 0.15


class TestCircleLayout:
    def test_antipodal_goals(self):
        starts, goals = circle_layout(8, 6.0, z=1.5)
        assert starts.shape == goals.shape == (8, 3)
        np.testing.assert_allclose(
            np.linalg.norm(starts[:, :2], axis=1), 6.0, atol=1e-12
        )
        np.testing.assert_allclose(goals[:, :2], -starts[:, :2], atol=1e-12)
        np.testing.assert_array_equal(starts[:, 2], 1.5)
        np.testing.assert_array_equal(goals[:, 2], 1.5)
        # exchange distance is the diameter
        np.testing.assert_allclose(
            np.linalg.norm(goals - starts, axis=1), 12.0, atol=1e-12
        )

    def test_needs_agents(self):
        with pytest.raises(ConfigError):
            circle_layout(0, 5.0)


def _scenario_doc(**over):
    doc = {
        "library_file": "tiny.mplib",
        "agents": {"starts": [[0, 0, 1]], "goals": [[4, 0, 1]]},
    }
    doc.update(over)
    return doc


class TestScenarioSpec:
    BASE = Path("/data/conf")

    def test_relative_paths_resolve_against_config_dir(self):
        spec = parse_scenario(_scenario_doc(), base_dir=self.BASE)
        assert spec.library_file == self.BASE / "tiny.mplib"
        # relations default: library path with swapped suffix
        assert spec.relations_file == self.BASE / "tiny.mprel"
        assert spec.csv_path is None and spec.json_path is None

    def test_explicit_outputs_resolve(self):
        doc = _scenario_doc(
            relations_file="other.mprel",
            outputs={"csv": "m.csv", "json": "s.json"},
        )
        spec = parse_scenario(doc, base_dir=self.BASE)
        assert spec.relations_file == self.BASE / "other.mprel"
        assert spec.csv_path == self.BASE / "m.csv"
        assert spec.json_path == self.BASE / "s.json"

    def test_defaults(self):
        spec = parse_scenario(_scenario_doc(), base_dir=self.BASE)
        assert spec.planner.r_goal == 0.3
        assert spec.planner.cloud_budget == 2000
        assert spec.sim.dt == 0.01 and spec.sim.timeout_s == 120.0
        assert spec.map_spec is None and spec.map_seed == 0

    def test_circle_agents(self):
        doc = _scenario_doc(agents={"circle": {"n": 4, "radius_m": 3.0}})
        spec = parse_scenario(doc, base_dir=self.BASE)
        assert spec.starts.shape == (4, 3)
        np.testing.assert_allclose(spec.goals[:, :2], -spec.starts[:, :2])

    def test_circle_and_lists_exclusive(self):
        doc = _scenario_doc(
            agents={
                "circle": {"n": 4, "radius_m": 3.0},
                "starts": [[0, 0, 1]],
            }
        )
        with pytest.raises(ConfigError, match="either circle or explicit"):
            parse_scenario(doc, base_dir=self.BASE)

    def test_agent_shape_mismatch(self):
        doc = _scenario_doc(
            agents={"starts": [[0, 0, 1]], "goals": [[1, 0, 1], [2, 0, 1]]}
        )
        with pytest.raises(ConfigError, match="matching"):
            parse_scenario(doc, base_dir=self.BASE)

    def test_bad_scheduler(self):
        doc = _scenario_doc(sim={"scheduler": "spacetime"})
        with pytest.raises(ConfigError, match="scheduler"):
            parse_scenario(doc, base_dir=self.BASE)

    def test_planner_bounds_parsed(self):
        doc = _scenario_doc(
            planner={"bounds": {"lo": [-1, -1, 0], "hi": [1, 1, 2]}}
        )
        spec = parse_scenario(doc, base_dir=self.BASE)
        np.testing.assert_array_equal(spec.planner.bounds.lo, [-1, -1, 0])
        np.testing.assert_array_equal(spec.planner.bounds.hi, [1, 1, 2])

    def test_map_parsed(self):
        doc = _scenario_doc(
            map={
                "n_obstacles": 3,
                "region_lo": [-5, -5, 0],
                "region_hi": [5, 5, 3],
                "radius_range": [0.2, 0.4],
            },
            map_seed=7,
        )
        spec = parse_scenario(doc, base_dir=self.BASE)
        assert spec.map_spec.n_obstacles == 3
        assert spec.map_spec.region_hi == (5.0, 5.0, 3.0)
        assert spec.map_seed == 7

    @pytest.mark.parametrize(
        "doc",
        [
            _scenario_doc(teleport=True),
            _scenario_doc(sim={"warp": 2}),
            _scenario_doc(planner={"greed": 1.0}),
            _scenario_doc(outputs={"xml": "no.xml"}),
            _scenario_doc(
                map={"n_obstacles": 1, "lava": True}
            ),
        ],
    )
    def test_unknown_keys_rejected(self, doc):
        with pytest.raises(ConfigError, match="unknown keys"):
            parse_scenario(doc, base_dir=self.BASE)


class TestLoadYaml:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_yaml(tmp_path / "none.yaml")

    def test_invalid_yaml(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text("a: [unclosed\n")
        with pytest.raises(ConfigError, match="invalid YAML"):
            load_yaml(p)

    def test_non_mapping_top_level(self, tmp_path):
        p = tmp_path / "list.yaml"
        p.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError, match="mapping"):
            load_yaml(p)

    def test_yaml_float_inf_radius(self, tmp_path):
        p = tmp_path / "lib.yaml"
        p.write_text(
            "library:\n"
            "  length_m: 2.0\n"
            "  rotation_step_deg: 90.0\n"
            "  arcs:\n"
            "    - {radius_m: 2.0}\n"
            "    - {radius_m: .inf}\n"
        )
        spec = load_library_spec(p)
        assert spec.library.arcs[1].radius_m == math.inf
