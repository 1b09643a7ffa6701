import io
import json

import numpy as np
import pandas as pd
import pytest

from src.errors import ConfigError, ProfileError
from src.lattice import GridSize
from src.parser import (load_profile, parse_profile_content, read_config_file, read_field,
                        write_field, write_result)
from src.profile import StepProfile
from src.samplers import sample_dgff, sample_mibrw

CONVEX_TOML = """
[profile]
sigmas = [0.7071067811865476, 1.224744871391589]
lambdas = [0.5, 1.0]
"""


class TestLoadProfile:
    def test_preset(self, convex2):
        assert load_profile("convex2") == convex2

    def test_passthrough(self, flat):
        assert load_profile(flat) is flat

    def test_mapping(self):
        profile = load_profile({"sigmas": [1.0], "lambdas": [1.0]})
        assert profile == StepProfile.preset("flat")

    def test_variances(self, convex2):
        profile = load_profile({"variances": [0.5, 1.5], "lambdas": [0.5, 1.0]})
        assert profile.sigmas == pytest.approx(convex2.sigmas)

    def test_json_string(self, decreasing2):
        text = json.dumps(decreasing2.to_dict())
        assert load_profile(text).sigmas == pytest.approx(decreasing2.sigmas)

    def test_toml_bytes_and_upload(self, convex2):
        assert load_profile(CONVEX_TOML.encode()).sigmas == pytest.approx(convex2.sigmas)
        assert load_profile(io.BytesIO(CONVEX_TOML.encode())).lambdas == convex2.lambdas

    def test_file_path(self, tmp_path, convex2):
        path = tmp_path / "profile.toml"
        path.write_text(CONVEX_TOML)
        assert load_profile(str(path)).sigmas == pytest.approx(convex2.sigmas)

    def test_unknown(self):
        with pytest.raises(ProfileError):
            load_profile("no-such-profile")

    def test_missing_keys(self):
        with pytest.raises(ProfileError):
            load_profile({"sigmas": [1.0]})

    def test_malformed_documents(self):
        with pytest.raises(ProfileError):
            parse_profile_content("   ")
        with pytest.raises(ProfileError):
            parse_profile_content("{not json")
        with pytest.raises(ProfileError):
            load_profile(b"\xff\xfe")


class TestFieldFiles:
    def test_npz_keeps_levels(self, tmp_path, convex2):
        sample = sample_mibrw(convex2, GridSize(3), k0=1, seed=4)
        restored = read_field(write_field(sample, tmp_path / "field.npz"))
        assert restored.kind == "tmibrw"
        assert restored.seed == 4
        assert restored.extra == {"k0": 1}
        assert restored.profile.sigmas == pytest.approx(convex2.sigmas)
        assert np.array_equal(restored.values, sample.values)
        assert np.array_equal(restored.levels, sample.levels)

    def test_csv(self, tmp_path):
        sample = sample_dgff(GridSize(3), seed=2)
        path = write_field(sample, tmp_path / "field.csv")
        assert path.read_text().startswith("# {")
        restored = read_field(path)
        assert restored.profile is None
        assert restored.levels is None
        assert np.allclose(restored.values, sample.values)

    def test_bad_suffix(self, tmp_path):
        sample = sample_dgff(GridSize(2), seed=2)
        with pytest.raises(ConfigError):
            write_field(sample, tmp_path / "field.txt")
        with pytest.raises(ConfigError):
            read_field(tmp_path / "field.txt")

    def test_csv_without_header(self, tmp_path):
        path = tmp_path / "plain.csv"
        path.write_text("1,2\n3,4\n")
        with pytest.raises(ConfigError):
            read_field(path)


class TestResults:
    def test_json(self, tmp_path):
        path = tmp_path / "out.json"
        text = write_result({"b": np.float64(1.5), "a": np.arange(2)}, None, path, "json")
        assert json.loads(path.read_text()) == {"a": [0, 1], "b": 1.5}
        assert text == path.read_text()

    def test_csv_has_meta_line(self):
        table = pd.DataFrame({"n": [3, 4], "value": [0.5, 0.25]})
        text = write_result({"meta": {"seed": 1}}, table, None, "csv")
        lines = text.splitlines()
        assert lines[0] == '# {"seed": 1}'
        assert lines[1] == "n,value"

    def test_csv_falls_back_to_json_without_table(self):
        text = write_result({"a": 1}, None, None, "csv")
        assert json.loads(text) == {"a": 1}


class TestConfigFiles:
    def test_toml_and_json(self, tmp_path):
        toml_path = tmp_path / "run.toml"
        toml_path.write_text('command = "tails"\nseed = 3\nn_list = [3, 4]\n')
        assert read_config_file(toml_path) == {"command": "tails", "seed": 3, "n_list": [3, 4]}
        json_path = tmp_path / "run.json"
        json_path.write_text('{"seed": 5}')
        assert read_config_file(json_path) == {"seed": 5}

    def test_missing(self, tmp_path):
        with pytest.raises(ConfigError):
            read_config_file(tmp_path / "absent.toml")

    def test_malformed(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{")
        with pytest.raises(ConfigError):
            read_config_file(path)
