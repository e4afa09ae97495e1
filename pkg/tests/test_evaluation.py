import itertools

import numpy as np
import pytest

from Notif_Attendance import evaluation
from Notif_Attendance import features
from Notif_Attendance import weighting
from Notif_Attendance.evaluation import TEST, TRAIN, UNKNOWN_TEST, VALIDATION
from Notif_Attendance.sensorevents import SensorKind, labelednotification

def pairwise_auc(scores, labels):
  pos = [s for s, l in zip(scores, labels) if l == 1]
  neg = [s for s, l in zip(scores, labels) if l == 0]
  wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
  return wins / (len(pos) * len(neg))

def predictions(rows):
  """ rows of (user, category, score, label) """
  users, categories, scores, labels = zip(*rows)
  return evaluation.predictionset(scores, labels, users, categories)

class TestRocAuc:
  def test_perfect(self):
    curve, auc = evaluation.roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    assert auc == 1.0
    assert curve.fpr[0] == 0.0 and curve.tpr[-1] == 1.0

  def test_one_swap(self):
    curve, auc = evaluation.roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    assert auc == 0.75

  def test_all_tied(self):
    curve, auc = evaluation.roc_auc([0.3] * 6, [0, 1, 0, 1, 1, 0])
    assert auc == 0.5
    np.testing.assert_array_equal(curve.fpr, [0.0, 1.0])

  def test_single_class(self):
    with pytest.raises(evaluation.AucUndefined):
      evaluation.roc_auc([0.1, 0.2], [1, 1])

  @pytest.mark.parametrize("seed", range(10))
  def test_matches_pairwise_count(self, seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 60))
    scores = rng.integers(0, 6, size=n).astype(float)
    labels = rng.integers(0, 2, size=n)
    labels[0], labels[1] = 0, 1
    curve, auc = evaluation.roc_auc(scores, labels)
    assert auc == pytest.approx(pairwise_auc(scores, labels), abs=1e-12)

  def test_small_tied_instances(self):
    rng = np.random.default_rng(12)
    for _ in range(1000):
      n = int(rng.integers(2, 13))
      scores = rng.integers(0, 3, size=n).astype(float)
      labels = rng.integers(0, 2, size=n)
      labels[rng.choice(n, size=2, replace=False)] = [0, 1]
      curve, auc = evaluation.roc_auc(scores, labels)
      assert abs(auc - pairwise_auc(scores, labels)) <= 1e-12

  def test_curve_is_monotone(self, rng):
    scores = rng.uniform(size=50)
    labels = (rng.uniform(size=50) < scores).astype(int)
    curve, auc = evaluation.roc_auc(scores, labels)
    assert np.all(np.diff(curve.fpr) >= 0)
    assert np.all(np.diff(curve.tpr) >= 0)
    assert np.all(np.diff(curve.thresholds) < 0)

class TestAggregate:
  def test_user_then_global_mean(self):
    rows = [("A", "Messaging", s, l) for s, l in zip([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])]
    rows += [("A", "Email", 0.5, l) for l in (0, 1)]
    rows += [("B", "Messaging", s, l) for s, l in zip([0.1, 0.4, 0.35, 0.8], [1, 1, 0, 0])]
    rows += [("B", "Games", 0.7, 0), ("B", "Games", 0.2, 0)]
    report = evaluation.aggregate(predictions(rows))
    assert report.user_auc == {"A": 0.75, "B": 0.25}
    assert report.global_auc == 0.5
    assert report.skipped == [("B", "Games")]
    assert report.categories() == ["Email", "Messaging"]
    assert report.cells[("A", "Messaging")].count == 4
    assert report.cells[("A", "Messaging")].positives == 2

  def test_every_cell_skipped(self):
    report = evaluation.aggregate(predictions([("A", "Email", 0.1, 0), ("A", "Email", 0.9, 0)]))
    assert report.empty
    assert report.global_auc is None

  def test_write_report(self, tmp_path):
    rows = [("A", "Email", s, l) for s, l in zip([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])]
    path = tmp_path / "report.tsv"
    evaluation.write_report(evaluation.aggregate(predictions(rows)), str(path))
    lines = path.read_text().splitlines()
    assert lines[1] == "A\tEmail\t0.750000\t4\t2"
    assert lines[-1] == "*\t*\t0.750000\t\t"

class TestSplit:
  def traces(self, make_trace, make_event, day0, users=8, days=35):
    out = list()
    for k in range(users):
      u = "u{}".format(k)
      out.append(make_trace([make_event(day0 + 3600, SensorKind.NOISE, user_id=u, db=1.0),
        make_event(day0 + (days - 0.5) * 86400, SensorKind.NOISE, user_id=u, db=1.0)], user_id=u))
    return out

  def test_boundaries_by_whole_days(self, make_trace, make_event, day0):
    datasplit = evaluation.split(self.traces(make_trace, make_event, day0), evaluation.splitspec(holdout_users=2))
    assert datasplit.boundary_days() == (21, 28)
    assert datasplit.part(datasplit.known_users[0], day0 + 20.9 * 86400) == TRAIN
    assert datasplit.part(datasplit.known_users[0], day0 + 21 * 86400) == VALIDATION
    assert datasplit.part(datasplit.known_users[0], day0 + 30 * 86400) == TEST

  def test_holdout_users(self, make_trace, make_event, day0):
    datasplit = evaluation.split(self.traces(make_trace, make_event, day0), evaluation.splitspec(holdout_users=2))
    assert len(datasplit.holdout_users) == 2
    assert not set(datasplit.holdout_users) & set(datasplit.known_users)
    held = datasplit.holdout_users[0]
    assert datasplit.part(held, day0 + 86400) is None
    assert datasplit.part(held, day0 + 30 * 86400) == UNKNOWN_TEST

  def test_no_holdout(self, make_trace, make_event, day0):
    traces = self.traces(make_trace, make_event, day0)
    datasplit = evaluation.split(traces, evaluation.splitspec(holdout_users=0))
    labels = dict((t.user_id, [labelednotification(t.user_id, day0 + 30 * 86400, "x", "Email", 1)]) for t in traces)
    assert datasplit.select(labels, UNKNOWN_TEST) == []
    assert len(datasplit.select(labels, TEST)) == len(traces)

  def test_same_seed_same_users(self, make_trace, make_event, day0):
    traces = self.traces(make_trace, make_event, day0, users=20)
    a = evaluation.split(traces, evaluation.splitspec(holdout_users=3, seed=5))
    b = evaluation.split(traces, evaluation.splitspec(holdout_users=3, seed=5))
    assert a.holdout_users == b.holdout_users

  def test_default_holdout_share(self):
    assert evaluation.splitspec().holdout_count(279) == 25
    assert evaluation.splitspec().holdout_count(8) == 1

  @pytest.mark.parametrize("spec", [
    evaluation.splitspec(train_frac=0.5, val_frac=0.2, test_frac=0.2),
    evaluation.splitspec(holdout_users=8),
  ])
  def test_invalid(self, make_trace, make_event, day0, spec):
    with pytest.raises(evaluation.SplitError):
      evaluation.split(self.traces(make_trace, make_event, day0), spec)

class TestBaseline:
  def table(self, positives, negatives):
    instances = [labelednotification("A", 0.0, "x", "Messaging", 1)] * positives
    instances += [labelednotification("A", 0.0, "x", "Messaging", 0)] * negatives
    return weighting.build_frequency_table(instances)

  def test_follows_training_rate(self):
    instances = [labelednotification("A", 0.0, "x", "Messaging", 0)] * 10000
    scores = evaluation.baseline_predict(self.table(8, 2), instances, seed=1)
    assert abs(scores.mean() - 0.8) < 0.02
    assert set(np.unique(scores)) <= {0.0, 1.0}

  def test_never_attended(self):
    instances = [labelednotification("A", 0.0, "x", "Messaging", 0)] * 100
    scores = evaluation.baseline_predict(self.table(0, 5), instances, seed=1)
    assert not scores.any()

  def test_seeded(self):
    instances = [labelednotification("A", 0.0, "x", "Messaging", 0)] * 50
    table = self.table(1, 1)
    np.testing.assert_array_equal(evaluation.baseline_predict(table, instances, 3),
      evaluation.baseline_predict(table, instances, 3))

class TestTrials:
  def test_single_trial_has_no_spread(self):
    stats = evaluation.run_trials(lambda seed: {"auc": 0.7}, n=1)
    assert stats[0].mean == 0.7
    assert stats[0].std is None

  def test_identical_trials(self):
    stats = evaluation.run_trials(lambda seed: {"auc": 0.5, "missing": None}, n=3)
    by_name = dict((s.name, s) for s in stats)
    assert by_name["auc"].std == 0.0
    assert by_name["missing"].mean is None

  def test_sample_deviation(self):
    stats = evaluation.run_trials(lambda seed: {"auc": float(seed)}, n=3, seeds=[1, 2, 3])
    assert stats[0].mean == 2.0
    assert stats[0].std == 1.0

  def test_seed_count(self):
    with pytest.raises(ValueError):
      evaluation.run_trials(lambda seed: {}, n=2, seeds=[1])

class TestSensorImportance:
  def test_deltas(self):
    calls = list()

    def factory(seed, ablate):
      calls.append((seed, ablate))
      return 0.8 - (0.1 if SensorKind.NOISE in ablate else 0.0)

    results = evaluation.sensor_importance(factory, seeds=[0, 1], units=(SensorKind.NOISE, SensorKind.LIGHT))
    by_unit = dict((r.unit, r) for r in results)
    assert by_unit[SensorKind.NOISE].delta_auc == pytest.approx(0.1)
    assert by_unit[SensorKind.LIGHT].delta_auc == 0.0
    assert len(by_unit[SensorKind.NOISE].deltas) == 2
    assert len(calls) == 6

  def test_undefined_auc(self):
    results = evaluation.sensor_importance(lambda seed, ablate: None if ablate else 0.7, seeds=[0],
      units=(SensorKind.APP,))
    assert results[0].delta_auc is None

class TestReports:
  def report(self):
    rows = [(u, c, s, l) for u in ("A", "B") for c in ("Email", "Messaging")
      for s, l in zip([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])]
    return evaluation.aggregate(predictions(rows))

  def test_category_curves(self):
    curves = evaluation.category_roc_curves(self.report(), points=11)
    assert sorted(curves) == ["Email", "Messaging"]
    assert len(curves["Email"].fpr) == 11
    assert evaluation.operating_point(curves["Email"], 0.8) == 1.0

  def test_auc_spread(self):
    rows = evaluation.category_auc_spread(self.report())
    assert [(r.category, r.users, r.minimum, r.maximum) for r in rows] == [
      ("Email", 2, 1.0, 1.0), ("Messaging", 2, 1.0, 1.0)]

  def test_constant_feature_distribution(self):
    manifest = [features.featurespec("constant", features.CONTEXT), features.featurespec("varying", features.CONTEXT)]
    X = np.array([[2.0, 0.0], [2.0, 1.0], [2.0, 2.0], [2.0, 3.0]])
    matrix = features.featurematrix(manifest, X, [0, 0, 1, 1], ["A"] * 4, ["Email"] * 4, [0.0] * 4)
    rows = evaluation.feature_distribution_report(matrix, bins=4)
    constant = rows[0]
    assert constant.edges[0] == 2.0 and constant.edges[-1] == 3.0
    assert constant.attended.density[0] == 1.0
    assert constant.unattended.median == 2.0
    assert rows[1].attended.mean == 2.5
