import dataclasses
import json

import numpy as np
import pytest

from Notif_Attendance import configuration
from Notif_Attendance import evaluation
from Notif_Attendance import pipelines
from Notif_Attendance import rnn
from Notif_Attendance import sensorevents
from Notif_Attendance import sparseencode
from Notif_Attendance import synthgen
from Notif_Attendance import weighting
from Notif_Attendance.evaluation import TEST, UNKNOWN_TEST, VALIDATION
from Notif_Attendance.sensorevents import SensorKind

def check_auc(value):
  assert value is None or 0.0 <= value <= 1.0

@pytest.fixture
def study_split(small_study, tiny_experiment):
  return evaluation.split(small_study.traces, tiny_experiment.scoring.split_spec(0))

class TestExperiment:
  def test_defaults_without_files(self, tmp_path):
    exp = pipelines.experiment.load(str(tmp_path))
    assert exp == pipelines.experiment()

  def test_reads_component_files(self, tmp_path):
    (tmp_path / "config_gbt.json").write_text(json.dumps({"n_estimators": 7}))
    (tmp_path / "config_experiment.json").write_text(json.dumps({"weighting": "uniform", "holidays": ["2016-06-07"]}))
    exp = pipelines.experiment.load(str(tmp_path))
    assert exp.trees.n_estimators == 7
    assert exp.base.scheme() == weighting.WeightScheme.UNIFORM
    assert exp.base.windows().holidays == ("2016-06-07",)

  def test_unknown_key(self, tmp_path):
    (tmp_path / "config_rnn.json").write_text(json.dumps({"layers": 3}))
    with pytest.raises(configuration.ConfigError):
      pipelines.experiment.load(str(tmp_path))

  def test_unknown_scheme(self, tmp_path):
    (tmp_path / "config_experiment.json").write_text(json.dumps({"weighting": "squared"}))
    with pytest.raises(weighting.WeightingError):
      pipelines.experiment.load(str(tmp_path))

  def test_not_an_object(self, tmp_path):
    (tmp_path / "config_evaluation.json").write_text("[1, 2]")
    with pytest.raises(configuration.ConfigError):
      pipelines.experiment.load(str(tmp_path))

  def test_with_seed(self):
    exp = pipelines.experiment().with_seed(11)
    assert (exp.base.seed, exp.trees.seed, exp.network.seed) == (11, 11, 11)

  def test_as_dict_is_json(self):
    json.dumps(pipelines.experiment().as_dict())

class TestDataset:
  def test_labels_per_user(self, small_study):
    for trace in small_study.traces:
      assert small_study.labels[trace.user_id] == sensorevents.label_notifications(trace)
    assert len(small_study.all_labels()) == sum(len(v) for v in small_study.labels.values())

  def test_missing_files(self, tmp_path):
    with pytest.raises(pipelines.MissingInputError):
      pipelines.dataset.load(str(tmp_path))

  def test_unknown_user(self, small_study):
    with pytest.raises(KeyError):
      small_study.trace("nobody")

class TestClassical:
  def test_run(self, small_study, study_split, tiny_experiment):
    result = pipelines.run_classical(small_study, study_split, tiny_experiment)
    assert set(result.reports) == set(pipelines.EVALUATED_PARTS)
    for part in pipelines.EVALUATED_PARTS:
      check_auc(result.auc(part))
    assert result.details["features"] == 169
    assert result.model.manifest_hash is not None
    assert set(result.metrics()) == {"gbt_validation", "gbt_test", "gbt_unknown_test"}

  def test_unknown_users_only_in_unknown_test(self, small_study, study_split, tiny_experiment):
    result = pipelines.run_classical(small_study, study_split, tiny_experiment)
    held = set(study_split.holdout_users)
    assert set(result.predictions[UNKNOWN_TEST].users) <= held
    assert not set(result.predictions[TEST].users) & held

  def test_absent_sensor_has_no_importance(self, small_study, study_split, tiny_experiment):
    traces = [dataclasses.replace(t, events=tuple(e for e in t.events if e.kind != SensorKind.AUDIO))
      for t in small_study.traces]
    data = pipelines.dataset(traces)
    full = pipelines.run_classical(data, study_split, tiny_experiment)
    ablated = pipelines.run_classical(data, study_split, tiny_experiment, ablate=frozenset([SensorKind.AUDIO]))
    assert ablated.details["features"] < full.details["features"]
    np.testing.assert_array_equal(full.predictions[TEST].scores, ablated.predictions[TEST].scores)
    assert full.auc(TEST) == ablated.auc(TEST)

  def test_exclude_truncated(self, small_study, study_split, tiny_experiment):
    exp = dataclasses.replace(tiny_experiment,
      scoring=dataclasses.replace(tiny_experiment.scoring, exclude_truncated=True))
    kept = pipelines.run_classical(small_study, study_split, tiny_experiment)
    dropped = pipelines.run_classical(small_study, study_split, exp)
    truncated = sum(1 for n in small_study.all_labels()
      if n.truncated and study_split.part(n.user_id, n.post_time) in pipelines.EVALUATED_PARTS)
    total = sum(len(kept.predictions[p]) for p in pipelines.EVALUATED_PARTS)
    assert sum(len(dropped.predictions[p]) for p in pipelines.EVALUATED_PARTS) == total - truncated

class TestBaseline:
  def test_run(self, small_study, study_split, tiny_experiment):
    result = pipelines.run_baseline(small_study, study_split, tiny_experiment)
    for part in pipelines.EVALUATED_PARTS:
      check_auc(result.auc(part))
      assert set(np.unique(result.predictions[part].scores)) <= {0.0, 1.0}

class TestRecurrent:
  def test_encode_streams(self, small_study, tiny_experiment):
    schema = sparseencode.build_schema()
    raw, before, after = pipelines.encode_streams(small_study, schema)
    assert before == after
    packed, before2, after2 = pipelines.encode_streams(small_study, schema, tiny_experiment.encoding)
    assert before2 == before
    assert after2 < before2
    for user_id, samples in packed.items():
      assert sum(1 for s in samples if s.y is not None) == len(small_study.labels[user_id])

  def test_run(self, small_study, study_split, tiny_experiment):
    result = pipelines.run_recurrent(small_study, study_split, tiny_experiment)
    for part in pipelines.EVALUATED_PARTS:
      check_auc(result.auc(part))
      scores = result.predictions[part].scores
      assert np.all((scores > 0) & (scores < 1))
    assert 1 <= len(result.details["history"]) <= tiny_experiment.network.max_epochs
    assert result.details["samples_after"] < result.details["samples_before"]
    assert result.details["stats"].width == result.details["schema"].width

  def test_normalization_sees_only_training_period(self, small_study, study_split, tiny_experiment):
    def louder(e):
      if e.kind == SensorKind.NOISE and e.timestamp >= study_split.train_end:
        return dataclasses.replace(e, payload={"db": e.payload["db"] * 10.0})
      return e
    traces = [dataclasses.replace(t, events=tuple(louder(e) for e in t.events)) for t in small_study.traces]
    exp = dataclasses.replace(tiny_experiment, network=dataclasses.replace(tiny_experiment.network, max_epochs=1))
    before = pipelines.run_recurrent(small_study, study_split, exp).details["stats"]
    after = pipelines.run_recurrent(pipelines.dataset(traces), study_split, exp).details["stats"]
    np.testing.assert_array_equal(before.cap, after.cap)
    np.testing.assert_array_equal(before.lo, after.lo)
    np.testing.assert_array_equal(before.hi, after.hi)

  def test_every_labeled_sample_scored(self, small_study, study_split, tiny_experiment):
    result = pipelines.run_recurrent(small_study, study_split, tiny_experiment, compress=False)
    expected = sum(1 for n in small_study.all_labels()
      if study_split.part(n.user_id, n.post_time) in pipelines.EVALUATED_PARTS)
    assert sum(len(result.predictions[p]) for p in pipelines.EVALUATED_PARTS) == expected

class TestDrivers:
  def test_trials(self, small_study, tiny_experiment):
    runner = pipelines.trial_runner(small_study, tiny_experiment, models=("gbt", "baseline"))
    stats = evaluation.run_trials(runner, n=2)
    names = [s.name for s in stats]
    assert "gbt_test" in names and "baseline_unknown_test" in names
    for s in stats:
      assert len(s.values) <= 2

  def test_ablation_factory(self, small_study, tiny_experiment):
    factory = pipelines.ablation_factory(small_study, tiny_experiment, "gbt")
    results = evaluation.sensor_importance(factory, [0], units=(SensorKind.NOISE,))
    assert results[0].unit == SensorKind.NOISE
    with pytest.raises(ValueError):
      pipelines.ablation_factory(small_study, tiny_experiment, "svm")(0, frozenset())

  def test_compare_weighting(self, small_study, study_split, tiny_experiment):
    rows = pipelines.compare_weighting(small_study, study_split, tiny_experiment)
    assert [r["scheme"] for r in rows] == ["inv", "inv-sqrt", "inv-log", "uniform"]
    for r in rows:
      check_auc(r["gbt"])

  def test_compare_compression(self, small_study, study_split, tiny_experiment):
    compressed, raw = pipelines.compare_compression(small_study, study_split, tiny_experiment)
    assert compressed["compressed"] and not raw["compressed"]
    assert compressed["samples"] < raw["samples"]
    assert compressed["train_samples"] < raw["train_samples"]

@pytest.fixture(scope="module")
def desk_experiment():
  exp = pipelines.experiment()
  return dataclasses.replace(exp,
    trees=dataclasses.replace(exp.trees, n_estimators=40, max_depth_grid=(3,)))

@pytest.fixture(scope="module")
def desk_study():
  """ Twenty users over two weeks with the default planted signal """
  return pipelines.dataset(synthgen.generate(synthgen.genconfig(num_users=20, num_days=14, seed=0)))

@pytest.mark.slow
class TestSignalRecovery:
  def test_gbt_beats_chance(self, desk_study, desk_experiment):
    datasplit = evaluation.split(desk_study.traces, desk_experiment.scoring.split_spec(0))
    result = pipelines.run_classical(desk_study, datasplit, desk_experiment)
    assert result.auc(TEST) >= 0.65
    assert abs(result.auc(UNKNOWN_TEST) - result.auc(TEST)) <= 0.05

  def test_baseline_is_chance(self, desk_study, desk_experiment):
    aucs = list()
    for seed in range(3):
      trial = desk_experiment.with_seed(seed)
      datasplit = evaluation.split(desk_study.traces, trial.scoring.split_spec(seed))
      aucs.append(pipelines.run_baseline(desk_study, datasplit, trial, seed).auc(TEST))
    assert 0.47 <= np.mean(aucs) <= 0.53

  def test_no_signal_no_skill(self, desk_experiment):
    config = synthgen.genconfig(num_users=20, num_days=14, seed=0, signal_strength=0.0, user_bias_sd=0.0)
    data = pipelines.dataset(synthgen.generate(config))
    datasplit = evaluation.split(data.traces, desk_experiment.scoring.split_spec(0))
    result = pipelines.run_classical(data, datasplit, desk_experiment)
    assert 0.4 <= result.auc(TEST) <= 0.6

  def test_ablation_finds_planted_sensor(self, desk_experiment):
    # Attendance follows only the number of notifications in the past hour.
    config = synthgen.genconfig(num_users=20, num_days=14, seed=0, coef_unlocks=0.0, coef_launches=0.0,
      coef_time_of_day=0.0, coef_notifications=2.5)
    data = pipelines.dataset(synthgen.generate(config))
    exp = dataclasses.replace(desk_experiment,
      trees=dataclasses.replace(desk_experiment.trees, subsample_grid=(1.0,)))
    factory = pipelines.ablation_factory(data, exp, "gbt")
    results = evaluation.sensor_importance(factory, range(5), units=(SensorKind.NOTIFICATION, SensorKind.NOISE))
    by_unit = dict((r.unit, r.delta_auc) for r in results)
    assert by_unit[SensorKind.NOTIFICATION] >= 0.05
    assert abs(by_unit[SensorKind.NOISE]) <= 0.02

  def test_compression_pays_off(self, desk_experiment):
    data = pipelines.dataset(synthgen.generate(synthgen.genconfig(num_users=8, num_days=10, seed=3)))
    exp = dataclasses.replace(desk_experiment,
      network=rnn.rnnconfig(embed=4, units=6, seq_len=50, batch_lo=2, batch_hi=4, max_epochs=1, patience=1))
    datasplit = evaluation.split(data.traces, exp.scoring.split_spec(0))
    compressed, raw = pipelines.compare_compression(data, datasplit, exp)
    assert raw["samples"] >= 5 * compressed["samples"]
    assert raw["mean_epoch_seconds"] >= 3 * compressed["mean_epoch_seconds"]
