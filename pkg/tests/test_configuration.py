import dataclasses

import pytest

from Notif_Attendance import configuration

@dataclasses.dataclass(frozen=True)
class sample:
  rate: float = 1.0
  grid: tuple = (1, 2)
  name: str = "x"

class TestConfiguration:
  def test_filename(self, tmp_path):
    config = configuration.configuration("gbt", str(tmp_path))
    assert config.filename == str(tmp_path / "config_gbt.json")

  def test_missing_file_is_empty(self, tmp_path):
    config = configuration.configuration("gbt", str(tmp_path))
    assert not config.exists()
    assert config.load() == {}

  def test_load(self, tmp_path):
    (tmp_path / "config_gbt.json").write_text('{"n_estimators": 3}')
    assert configuration.configuration("gbt", str(tmp_path)).load() == {"n_estimators": 3}

  @pytest.mark.parametrize("content", ["{not json", "[1, 2]", "3"])
  def test_bad_content(self, tmp_path, content):
    (tmp_path / "config_gbt.json").write_text(content)
    with pytest.raises(configuration.ConfigError):
      configuration.configuration("gbt", str(tmp_path)).load()

class TestMerge:
  def test_no_overrides(self):
    defaults = sample()
    assert configuration.merge(defaults, {}) is defaults

  def test_lists_become_tuples(self):
    merged = configuration.merge(sample(), {"grid": [3, 4], "rate": 0.5})
    assert merged == sample(rate=0.5, grid=(3, 4))

  def test_unknown_key(self):
    with pytest.raises(configuration.ConfigError):
      configuration.merge(sample(), {"rat": 0.5})

  def test_as_dict(self):
    assert configuration.as_dict(sample()) == {"rate": 1.0, "grid": [1, 2], "name": "x"}
