import pytest
from pydantic import ValidationError

from src.config import ExperimentConfig, Settings, parse_float_list, parse_int_list


class TestLists:
    def test_int_lists(self):
        assert parse_int_list("3..6") == [3, 4, 5, 6]
        assert parse_int_list("3,5") == [3, 5]
        assert parse_int_list(4) == [4]

    def test_int_list_errors(self):
        with pytest.raises(ValueError):
            parse_int_list("6..3")
        with pytest.raises(ValueError):
            parse_int_list(",")

    def test_float_lists(self):
        assert parse_float_list("0:1:0.25") == [0.0, 0.25, 0.5, 0.75, 1.0]
        assert parse_float_list("0,0.5") == [0.0, 0.5]
        assert parse_float_list(2) == [2.0]
        with pytest.raises(ValueError):
            parse_float_list("0:1:0")


class TestExperimentConfig:
    def test_defaults(self):
        config = ExperimentConfig(command="profile")
        assert config.n_list == [4]
        assert config.kappa == "auto"
        assert config.seed is None

    def test_seed_required(self):
        for command in ("sample", "compare", "tails", "second-moment"):
            with pytest.raises(ValidationError):
                ExperimentConfig(command=command)
        ExperimentConfig(command="cov-check")

    def test_n_list(self):
        with pytest.raises(ValidationError):
            ExperimentConfig(command="profile", n_list=[5, 4])
        with pytest.raises(ValidationError):
            ExperimentConfig(command="profile", n_list=[0])
        with pytest.raises(ValidationError):
            ExperimentConfig(command="profile", n_list=[])

    def test_unknown_keys_and_items(self):
        with pytest.raises(ValidationError):
            ExperimentConfig(command="profile", colour="blue")
        with pytest.raises(ValidationError):
            ExperimentConfig(command="cov-check", items=["v"])

    def test_k0_bounded_by_n(self):
        with pytest.raises(ValidationError):
            ExperimentConfig(command="tails", seed=1, kind="tmibrw", k0=5, n_list=[4])

    def test_digest_ignores_output(self):
        a = ExperimentConfig(command="tails", seed=1, output="a.json", threads=2)
        b = ExperimentConfig(command="tails", seed=1, output="b.json")
        c = ExperimentConfig(command="tails", seed=2)
        assert a.digest() == b.digest()
        assert a.digest() != c.digest()


def test_settings_from_env(monkeypatch, tmp_path):
    monkeypatch.setenv("DGFF_CACHE_DIR", str(tmp_path))
    monkeypatch.setenv("DGFF_MAX_DENSE_SIDE", "32")
    monkeypatch.setenv("DGFF_THREADS", "0")
    settings = Settings.from_env()
    assert settings.cache_dir == tmp_path
    assert settings.max_dense_side == 32
    assert settings.threads == 1
