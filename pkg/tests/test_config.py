import numpy as np
import pytest

from mixed_bo.config import FileConfig, dump_config, load_config
from mixed_bo.engine import RunConfig
from mixed_bo.errors import ConfigurationError

CONFIG = """\
hyperparams:
  gamma: [[25.0, 25.0]]
  P: [[200.0, 150.0], [120.0, 180.0]]
  s: [[1.0], [0.8]]
  m: [0.0, -0.2]
  noise_var: 0.001
run:
  algo: mtes
  budget: 300
  n_candidates: 12
"""


def write(tmp_path, text):
    path = tmp_path / "mixed-bo.yaml"
    path.write_text(text)
    return path


class TestLoadConfig:
    def test_both_sections(self, tmp_path):
        cfg = load_config(write(tmp_path, CONFIG))
        assert cfg.hyperparams.M == 2 and cfg.hyperparams.d == 2
        run = cfg.run_config()
        assert run.algo == "mtes"
        assert run.budget == 300
        assert run.n_candidates == 12

    def test_overrides_win_unless_none(self, tmp_path):
        cfg = load_config(write(tmp_path, CONFIG))
        run = cfg.run_config(budget=50.0, n_candidates=None, seed=7)
        assert run.budget == 50.0
        assert run.n_candidates == 12
        assert run.seed == 7

    def test_defaults_sit_below_the_file(self, tmp_path):
        cfg = load_config(write(tmp_path, CONFIG))
        run = cfg.run_config({"budget": 999.0, "fixed": ["all"]}, seed=2)
        assert run.budget == 300.0
        assert run.fixed == ["gamma", "P", "s", "m", "noise_var"]
        assert run.seed == 2

    def test_empty_file(self, tmp_path):
        cfg = load_config(write(tmp_path, ""))
        assert cfg.hyperparams is None
        assert cfg.run_config() == RunConfig()

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / "absent.yaml")

    @pytest.mark.parametrize(
        "text",
        [
            "- just\n- a list\n",
            "hyperparams: {}\nextras: 1\n",
            "run:\n  iterations: 5\n",
            "run: [1, 2]\n",
            "run: {algo: mtpes\n",
            "hyperparams:\n  gamma: [[1.0]]\n",
        ],
    )
    def test_invalid(self, tmp_path, text):
        with pytest.raises(ConfigurationError):
            load_config(write(tmp_path, text))

    def test_invalid_run_values_are_reported(self, tmp_path):
        with pytest.raises(ConfigurationError, match="warm_frac"):
            load_config(write(tmp_path, "run:\n  warm_frac: 1.5\n"))


def test_dump_then_load(tmp_path, h2):
    path = dump_config(tmp_path / "out.yaml", RunConfig(algo="pes", budget=80.0, fixed=["m"]), h2)
    cfg = load_config(path)
    np.testing.assert_array_equal(cfg.hyperparams.P, h2.P)
    assert cfg.run_config() == RunConfig(algo="pes", budget=80.0, fixed=["m"])


def test_default_file_config():
    assert FileConfig().run_config(algo="mtes").algo == "mtes"
