import json

import pytest

from Notif_Attendance import cli
from Notif_Attendance import pipelines
from Notif_Attendance import sensorevents
from Notif_Attendance import sparseencode

TINY_CONFIG = {
  "synthgen": {"num_users": 6, "num_days": 10, "seed": 3, "sessions_per_day": 30.0, "sampling_period_min": 30.0},
  "gbt": {"n_estimators": 8, "max_depth_grid": [2], "subsample_grid": [1.0]},
  "rnn": {"embed": 4, "units": 6, "seq_len": 20, "batch_lo": 2, "batch_hi": 4, "max_epochs": 2, "patience": 1,
    "learning_rate": 0.01},
  "evaluation": {"holdout_users": 1, "trials": 2, "ablation_seeds": 1},
}

def write_config(directory, sections):
  directory.mkdir(parents=True, exist_ok=True)
  for name, values in sections.items():
    (directory / "config_{}.json".format(name)).write_text(json.dumps(values))
  return directory

def manifest(out):
  return json.loads((out / "manifest.json").read_text())

@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
  """ Tiny config directory and a dataset generated from it """
  root = tmp_path_factory.mktemp("cli")
  config = write_config(root / "config", TINY_CONFIG)
  data = root / "data"
  assert cli.run(["generate", "--config", str(config), "--out", str(data)]) == cli.EXIT_OK
  return config, data

def run(workspace, command, out, *extra):
  config, data = workspace
  return cli.run([command, "--config", str(config), "--data", str(data), "--out", str(out)] + list(extra))

class TestGenerate:
  def test_dataset_files(self, workspace):
    config, data = workspace
    for name in ("events.tsv", "demographics.tsv", "genconfig.json", "summary.tsv", "manifest.json"):
      assert (data / name).is_file()
    record = manifest(data)
    assert record["command"] == "generate"
    assert record["counts"]["users"] == 6
    assert record["config"]["synth"]["num_users"] == 6

class TestStages:
  def test_label(self, workspace, tmp_path):
    assert run(workspace, "label", tmp_path) == cli.EXIT_OK
    labels = sensorevents.read_labels(str(tmp_path / "labels.tsv"))
    data = pipelines.dataset.load(str(workspace[1]))
    assert labels == data.labels
    record = manifest(tmp_path)
    assert record["counts"]["violations"] == 0
    assert set(record["inputs"]) == {str(workspace[1] / "events.tsv"), str(workspace[1] / "demographics.tsv")}

  def test_encode_then_compress(self, workspace, tmp_path):
    assert run(workspace, "encode", tmp_path) == cli.EXIT_OK
    config, _ = workspace
    assert run((config, tmp_path), "compress", tmp_path) == cli.EXIT_OK
    counts = manifest(tmp_path)["counts"]
    assert counts["samples_after"] < counts["samples_before"]
    schema = sparseencode.build_schema()
    schema_hash, streams = sparseencode.read_samples(str(tmp_path / "samples_compressed.tsv"), schema)
    assert schema_hash == schema.hash
    assert sum(len(s) for s in streams.values()) == counts["samples_after"]

  def test_features(self, workspace, tmp_path):
    assert run(workspace, "features", tmp_path) == cli.EXIT_OK
    assert manifest(tmp_path)["counts"]["features"] == 169

  def test_gbt_train_then_predict(self, workspace, tmp_path):
    assert run(workspace, "train-gbt", tmp_path) == cli.EXIT_OK
    assert (tmp_path / "gbt_model.txt").is_file()
    assert (tmp_path / "gbt_report_test.tsv").is_file()
    assert run(workspace, "predict-gbt", tmp_path) == cli.EXIT_OK
    lines = (tmp_path / "gbt_predictions.tsv").read_text().splitlines()
    assert lines[0] == "user_id\tcategory\tpost_time\tpart\tlabel\tscore"
    assert len(lines) > 1

  def test_rnn_train_then_predict(self, workspace, tmp_path):
    assert run(workspace, "train-rnn", tmp_path) == cli.EXIT_OK
    for name in ("rnn_model.bin", "rnn_normalization.json", "rnn_history.tsv"):
      assert (tmp_path / name).is_file()
    assert "epoch_seconds" in manifest(tmp_path)["timing"]
    assert run(workspace, "predict-rnn", tmp_path) == cli.EXIT_OK
    assert (tmp_path / "rnn_predictions.tsv").is_file()

  def test_evaluate(self, workspace, tmp_path):
    assert run(workspace, "evaluate", tmp_path, "--models", "gbt,baseline") == cli.EXIT_OK
    rows = (tmp_path / "evaluate.tsv").read_text().splitlines()[1:]
    assert [tuple(r.split("\t")[:2]) for r in rows] == [
      ("gbt", "validation"), ("gbt", "test"), ("gbt", "unknown_test"),
      ("baseline", "validation"), ("baseline", "test"), ("baseline", "unknown_test")]
    assert len(manifest(tmp_path)["counts"]["holdout_users"]) == 1

  def test_trials(self, workspace, tmp_path):
    assert run(workspace, "trials", tmp_path, "--models", "baseline", "--trials", "2") == cli.EXIT_OK
    rows = [r.split("\t") for r in (tmp_path / "trials.tsv").read_text().splitlines()[1:]]
    assert [r[0] for r in rows] == ["baseline_validation", "baseline_test", "baseline_unknown_test"]
    assert rows[0][3] == "2"

  def test_weighting(self, workspace, tmp_path):
    assert run(workspace, "weighting", tmp_path, "--models", "gbt") == cli.EXIT_OK
    rows = (tmp_path / "weighting.tsv").read_text().splitlines()
    assert rows[0] == "scheme\tgbt"
    assert [r.split("\t")[0] for r in rows[1:]] == ["inv", "inv-sqrt", "inv-log", "uniform"]

  def test_report(self, workspace, tmp_path):
    assert run(workspace, "report", tmp_path) == cli.EXIT_OK
    for name in ("summary.tsv", "distribution.tsv", "curves.tsv", "spread.tsv"):
      assert (tmp_path / name).is_file()

class TestExitCodes:
  def test_missing_dataset(self, workspace, tmp_path):
    config, data = workspace
    code = cli.run(["label", "--config", str(config), "--data", str(tmp_path / "nothing"), "--out", str(tmp_path)])
    assert code == cli.EXIT_MISSING_INPUT

  def test_compress_without_samples(self, workspace, tmp_path):
    # samples.tsv is read from --data, not from --out
    assert run(workspace, "encode", tmp_path) == cli.EXIT_OK
    assert run(workspace, "compress", tmp_path) == cli.EXIT_MISSING_INPUT

  def test_predict_without_model(self, workspace, tmp_path):
    assert run(workspace, "predict-gbt", tmp_path) == cli.EXIT_MISSING_INPUT

  def test_model_mismatch(self, workspace, tmp_path):
    config, data = workspace
    assert run(workspace, "train-gbt", tmp_path) == cli.EXIT_OK
    other = write_config(tmp_path / "other", dict(TINY_CONFIG, experiment={"moment_s": 600}))
    code = cli.run(["predict-gbt", "--config", str(other), "--data", str(data), "--out", str(tmp_path)])
    assert code == cli.EXIT_MODEL_MISMATCH

  def test_bad_config_value(self, workspace, tmp_path):
    config, data = workspace
    bad = write_config(tmp_path / "bad", {"experiment": {"weighting": "squared"}})
    code = cli.run(["label", "--config", str(bad), "--data", str(data), "--out", str(tmp_path)])
    assert code == cli.EXIT_DATA_ERROR

  @pytest.mark.parametrize("argv", [["bogus"], ["evaluate", "--models", "svm"], ["label", "--seed", "x"]])
  def test_usage(self, argv):
    with pytest.raises(SystemExit) as exit_info:
      cli.run(argv)
    assert exit_info.value.code == cli.EXIT_USAGE

class TestDeterminism:
  def test_same_seed_same_artifacts(self, workspace, tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    for out in (first, second):
      assert run(workspace, "evaluate", out, "--models", "gbt,baseline", "--seed", "4") == cli.EXIT_OK
    for name in manifest(first)["artifacts"]:
      assert (first / name).read_bytes() == (second / name).read_bytes()
    a, b = manifest(first), manifest(second)
    for record in (a, b):
      del record["wall_clock_s"]
    assert a == b
    assert a["seed"] == 4
