"""
MIT License

Copyright (c) 2018 Roger Cheng

Permission is hereby granted, free of charge, to any person obtaining a copy
of this software and associated documentation files (the "Software"), to deal
in the Software without restriction, including without limitation the rights
to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
copies of the Software, and to permit persons to whom the Software is
furnished to do so, subject to the following conditions:

The above copyright notice and this permission notice shall be included in all
copies or substantial portions of the Software.

THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
SOFTWARE.
"""
import collections
import dataclasses
import logging
import math

import numpy as np

from Notif_Attendance import configuration
from Notif_Attendance import sensorevents

SECONDS_PER_DAY = 86400.0

# Share of users held out as unknown, 25 of 279.
HOLDOUT_SHARE = 25.0 / 279.0

TRAIN = "train"
VALIDATION = "validation"
TEST = "test"
UNKNOWN_TEST = "unknown_test"
PARTS = (TRAIN, VALIDATION, TEST, UNKNOWN_TEST)

class SplitError(ValueError):
  """ Raised when a dataset can not be split as asked. """

class AucUndefined(ValueError):
  """ Raised when scores to rank have only one class of labels. """

@dataclasses.dataclass(frozen=True)
class splitspec:
  train_frac: float = 0.6
  val_frac: float = 0.2
  test_frac: float = 0.2
  # None holds out round(users * 25/279).
  holdout_users: int = None
  seed: int = 0

  def validate(self, num_users):
    fractions = (self.train_frac, self.val_frac, self.test_frac)
    if min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
      raise SplitError("Split fractions {} must be non-negative and sum to 1".format(fractions))
    if self.holdout_count(num_users) >= num_users:
      raise SplitError("Holding out {} of {} users leaves none to train on".format(
        self.holdout_count(num_users), num_users))

  def holdout_count(self, num_users):
    if self.holdout_users is not None:
      return int(self.holdout_users)
    return int(round(num_users * HOLDOUT_SHARE))

@dataclasses.dataclass(frozen=True)
class evaluationconfig:
  """ Contents of config_evaluation.json """
  train_frac: float = 0.6
  val_frac: float = 0.2
  test_frac: float = 0.2
  holdout_users: int = None
  trials: int = 10
  ablation_seeds: int = 10
  exclude_truncated: bool = False
  roc_grid_points: int = 101
  specificity: float = 0.8

  def split_spec(self, seed):
    return splitspec(self.train_frac, self.val_frac, self.test_frac, self.holdout_users, seed)

  @classmethod
  def from_dict(cls, values):
    return configuration.merge(cls(), values)

class datasplit:
  """
  Users and time boundaries of one split. Known users contribute their
  train, validation and test periods; held out users only their test
  period, as the unknown test set. Their earlier data is never trained on.
  """
  def __init__(self, known_users, holdout_users, day0, boundaries, end):
    self.known_users = tuple(known_users)
    self.holdout_users = tuple(holdout_users)
    self.day0 = day0
    self.train_end, self.val_end = boundaries
    self.end = end

  def period(self, timestamp):
    if timestamp < self.train_end:
      return TRAIN
    if timestamp < self.val_end:
      return VALIDATION
    return TEST

  def part(self, user_id, timestamp):
    """ Part the instance belongs to, or None for held out users' earlier data """
    period = self.period(timestamp)
    if user_id in self.holdout_users:
      return UNKNOWN_TEST if period == TEST else None
    return period

  def select(self, labels_by_user, part):
    """ Labeled notifications of one part, in user then time order """
    out = list()
    for user_id in sorted(labels_by_user):
      out.extend(n for n in labels_by_user[user_id] if self.part(user_id, n.post_time) == part)
    return out

  def boundary_days(self):
    return (int(round((self.train_end - self.day0) / SECONDS_PER_DAY)),
      int(round((self.val_end - self.day0) / SECONDS_PER_DAY)))

def split(traces, spec=None):
  """
  Holds out users first, drawn by the spec's seed, then cuts the study
  span into train, validation and test periods by whole days.
  """
  spec = spec or splitspec()
  users = sorted(t.user_id for t in traces)
  spec.validate(len(users))
  populated = [t for t in traces if t.events]
  if not populated:
    raise SplitError("No trace holds any event")

  day0 = math.floor(min(t.start_time for t in populated) / SECONDS_PER_DAY) * SECONDS_PER_DAY
  ndays = int(math.ceil((max(t.end_time for t in populated) - day0) / SECONDS_PER_DAY))
  train_days = int(round(spec.train_frac * ndays))
  val_days = int(round((spec.train_frac + spec.val_frac) * ndays))
  if train_days < 1 or (spec.val_frac > 0 and val_days <= train_days) or (spec.test_frac > 0 and val_days >= ndays):
    raise SplitError("{} days are not enough for fractions {}/{}/{}".format(
      ndays, spec.train_frac, spec.val_frac, spec.test_frac))

  rng = np.random.default_rng(spec.seed)
  count = spec.holdout_count(len(users))
  held = set(rng.choice(users, size=count, replace=False).tolist()) if count > 0 else set()
  known = [u for u in users if u not in held]
  return datasplit(known, sorted(held), day0,
    (day0 + train_days * SECONDS_PER_DAY, day0 + val_days * SECONDS_PER_DAY),
    day0 + ndays * SECONDS_PER_DAY)

@dataclasses.dataclass(frozen=True)
class roccurve:
  fpr: np.ndarray
  tpr: np.ndarray
  # Score thresholds, descending; point k predicts positive for score >= thresholds[k-1].
  thresholds: np.ndarray

def roc_auc(scores, labels):
  """
  ROC curve over all distinct score thresholds and its area. The area is
  accumulated in integers as the trapezoid sum of FP steps times TP
  heights, so it equals the Mann-Whitney statistic with half credit for
  ties exactly.
  """
  scores = np.asarray(scores, dtype=float)
  labels = np.asarray(labels, dtype=int)
  P = int(np.sum(labels == 1))
  N = int(np.sum(labels == 0))
  if P == 0 or N == 0:
    raise AucUndefined("AUC needs both classes, got {} positives and {} negatives".format(P, N))

  order = np.argsort(-scores, kind="stable")
  s = scores[order]
  l = labels[order]
  last_of_group = np.flatnonzero(np.append(s[1:] != s[:-1], True))
  tp = np.cumsum(l == 1)[last_of_group].astype(np.int64)
  fp = np.cumsum(l == 0)[last_of_group].astype(np.int64)
  tp = np.concatenate(([0], tp))
  fp = np.concatenate(([0], fp))

  area = 0
  for k in range(1, len(tp)):
    area += int(fp[k] - fp[k - 1]) * int(tp[k] + tp[k - 1])
  curve = roccurve(fp / float(N), tp / float(P), s[last_of_group])
  return curve, area / (2.0 * P * N)

class predictionset:
  """ Scores with the label, user and category of each instance """
  def __init__(self, scores, labels, users, categories):
    self.scores = np.asarray(scores, dtype=float)
    self.labels = np.asarray(labels, dtype=int)
    self.users = list(users)
    self.categories = list(categories)
    if not len(self.scores) == len(self.labels) == len(self.users) == len(self.categories):
      raise ValueError("Scores, labels, users and categories differ in length")

  def __len__(self):
    return len(self.scores)

  def subset(self, mask):
    keep = np.flatnonzero(np.asarray(mask, dtype=bool))
    return predictionset(self.scores[keep], self.labels[keep],
      [self.users[i] for i in keep], [self.categories[i] for i in keep])

  @classmethod
  def concatenate(cls, parts):
    parts = list(parts)
    return cls(np.concatenate([p.scores for p in parts]) if parts else [],
      np.concatenate([p.labels for p in parts]) if parts else [],
      [u for p in parts for u in p.users], [c for p in parts for c in p.categories])

@dataclasses.dataclass(frozen=True)
class cellresult:
  user_id: str
  category: str
  auc: float
  count: int
  positives: int
  curve: roccurve = dataclasses.field(repr=False, compare=False)

class evalreport:
  """
  AUC per (user, category) cell, the category mean per user and the user
  mean overall. Cells without both classes are listed in 'skipped'.
  """
  def __init__(self, cells, skipped):
    self.cells = dict(((c.user_id, c.category), c) for c in cells)
    self.skipped = list(skipped)
    per_user = collections.defaultdict(list)
    for c in cells:
      per_user[c.user_id].append(c.auc)
    self.user_auc = dict((u, float(np.mean(v))) for u, v in sorted(per_user.items()))
    self.global_auc = float(np.mean(list(self.user_auc.values()))) if self.user_auc else None

  @property
  def empty(self):
    return self.global_auc is None

  def categories(self):
    return sorted(set(c for u, c in self.cells))

def aggregate(predictions):
  """ Per cell AUC, then the mean over categories per user, then over users. """
  groups = collections.defaultdict(list)
  for i, (u, c) in enumerate(zip(predictions.users, predictions.categories)):
    groups[(u, c)].append(i)

  cells, skipped = list(), list()
  for (u, c) in sorted(groups):
    idx = np.asarray(groups[(u, c)])
    try:
      curve, auc = roc_auc(predictions.scores[idx], predictions.labels[idx])
    except AucUndefined:
      skipped.append((u, c))
      continue
    cells.append(cellresult(u, c, auc, len(idx), int(predictions.labels[idx].sum()), curve))

  if skipped:
    logging.getLogger(__name__).debug("Skipped %d single class cells of %d", len(skipped), len(groups))
  report = evalreport(cells, skipped)
  if report.empty:
    logging.getLogger(__name__).warning("No (user, category) cell has both classes, AUC undefined")
  return report

def baseline_predict(table, instances, seed):
  """
  Probability based random classifier: each instance is predicted
  positive with the training positive rate of its user and category,
  falling back to the category and then the global rate. The 0/1
  decision is the score.
  """
  rng = np.random.default_rng(seed)
  draws = rng.uniform(size=len(instances))
  rates = np.array([table.positive_rate(i.user_id, i.category) for i in instances], dtype=float)
  return (draws < rates).astype(float)

@dataclasses.dataclass(frozen=True)
class importance:
  unit: sensorevents.SensorKind
  delta_auc: float
  deltas: tuple

def sensor_importance(pipeline_factory, seeds, units=sensorevents.ABLATION_UNITS):
  """
  Retrains without one ablation unit at a time. 'pipeline_factory' is
  called as factory(seed, ablate) with a frozenset of removed sensors and
  returns a global AUC. The importance of a unit is the full-sensor AUC
  minus the ablated AUC, averaged over seeds.
  """
  seeds = list(seeds)
  full = dict((seed, pipeline_factory(seed, frozenset())) for seed in seeds)
  results = list()
  for unit in units:
    deltas = list()
    for seed in seeds:
      ablated = pipeline_factory(seed, frozenset([unit]))
      if full[seed] is None or ablated is None:
        logging.getLogger(__name__).warning("Seed %s without %s has no AUC", seed, unit.value)
        continue
      deltas.append(full[seed] - ablated)
    mean = float(np.mean(deltas)) if deltas else None
    logging.getLogger(__name__).info("Without %s: mean AUC change %s", unit.value, mean)
    results.append(importance(unit, mean, tuple(deltas)))
  return results

@dataclasses.dataclass(frozen=True)
class trialstat:
  name: str
  mean: float
  # Sample standard deviation, None with fewer than two trials.
  std: float
  values: tuple

def run_trials(runner, n=10, seeds=None):
  """
  Runs 'runner(seed)' for n trials, each returning a dict of metric name
  to value (None when undefined). Reports mean and sample standard
  deviation per metric.
  """
  if n < 1:
    raise ValueError("Need at least one trial, got {}".format(n))
  seeds = list(seeds) if seeds is not None else list(range(n))
  if len(seeds) != n:
    raise ValueError("{} seeds given for {} trials".format(len(seeds), n))

  collected = collections.OrderedDict()
  for k, seed in enumerate(seeds):
    logging.getLogger(__name__).info("Trial %d of %d, seed %s", k + 1, n, seed)
    for name, value in runner(seed).items():
      collected.setdefault(name, list())
      if value is not None:
        collected[name].append(float(value))

  stats = list()
  for name, values in collected.items():
    mean = float(np.mean(values)) if values else None
    std = float(np.std(values, ddof=1)) if len(values) > 1 else None
    stats.append(trialstat(name, mean, std, tuple(values)))
  return stats

@dataclasses.dataclass(frozen=True)
class classsummary:
  q1: float
  median: float
  q3: float
  mean: float
  # Share of values in each of the histogram bins
  density: tuple

@dataclasses.dataclass(frozen=True)
class featuredistribution:
  name: str
  group: str
  edges: tuple
  unattended: classsummary
  attended: classsummary

def _class_summary(values, edges):
  if len(values) == 0:
    return None
  q1, median, q3 = np.percentile(values, [25, 50, 75])
  counts, _ = np.histogram(values, bins=edges)
  return classsummary(float(q1), float(median), float(q3), float(np.mean(values)),
    tuple(float(c) / len(values) for c in counts))

def feature_distribution_report(matrix, bins=10):
  """ Per feature quartiles, mean and a histogram for each label class. """
  rows = list()
  for j, spec in enumerate(matrix.manifest):
    column = matrix.X[:, j]
    lo, hi = (float(column.min()), float(column.max())) if len(column) else (0.0, 1.0)
    if hi <= lo:
      hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    rows.append(featuredistribution(spec.name, spec.group, tuple(float(e) for e in edges),
      _class_summary(column[matrix.labels == 0], edges),
      _class_summary(column[matrix.labels == 1], edges)))
  return rows

def category_roc_curves(report, points=101):
  """ User averaged ROC curve of each category on a fixed FPR grid. """
  grid = np.linspace(0.0, 1.0, points)
  curves = dict()
  for category in report.categories():
    tprs = [np.interp(grid, c.curve.fpr, c.curve.tpr) for (u, cat), c in sorted(report.cells.items()) if cat == category]
    if tprs:
      curves[category] = roccurve(grid, np.mean(tprs, axis=0), np.zeros(0))
  return curves

@dataclasses.dataclass(frozen=True)
class aucspread:
  category: str
  users: int
  minimum: float
  q1: float
  median: float
  q3: float
  maximum: float

def category_auc_spread(report):
  """ Distribution of the per user AUC within each category """
  rows = list()
  for category in report.categories():
    values = [c.auc for (u, cat), c in report.cells.items() if cat == category]
    q1, median, q3 = np.percentile(values, [25, 50, 75])
    rows.append(aucspread(category, len(values), float(min(values)), float(q1), float(median),
      float(q3), float(max(values))))
  return rows

def operating_point(curve, specificity=0.8):
  """ Sensitivity reached at the given specificity, interpolated on the curve """
  return float(np.interp(1.0 - specificity, curve.fpr, curve.tpr))

def _fmt(value):
  return "" if value is None else "{:.6f}".format(value)

def write_report(report, path):
  with open(path, "w") as out:
    out.write("user_id\tcategory\tauc\tcount\tpositives\n")
    for (u, c), cell in sorted(report.cells.items()):
      out.write("{}\t{}\t{}\t{}\t{}\n".format(u, c, _fmt(cell.auc), cell.count, cell.positives))
    for u, auc in report.user_auc.items():
      out.write("{}\t*\t{}\t\t\n".format(u, _fmt(auc)))
    out.write("*\t*\t{}\t\t\n".format(_fmt(report.global_auc)))

def write_trials(stats, path):
  with open(path, "w") as out:
    out.write("metric\tmean\tstd\ttrials\n")
    for s in stats:
      out.write("{}\t{}\t{}\t{}\n".format(s.name, _fmt(s.mean), _fmt(s.std), len(s.values)))

def write_importance(results, path):
  with open(path, "w") as out:
    out.write("sensor\tdelta_auc\truns\n")
    for r in results:
      out.write("{}\t{}\t{}\n".format(r.unit.value, _fmt(r.delta_auc), len(r.deltas)))

def write_curves(curves, path, specificity=0.8):
  """ Long format ROC points per category, plus the sensitivity at 'specificity' """
  with open(path, "w") as out:
    out.write("category\tfpr\ttpr\n")
    for category in sorted(curves):
      curve = curves[category]
      for f, t in zip(curve.fpr, curve.tpr):
        out.write("{}\t{:.4f}\t{:.6f}\n".format(category, f, t))
    for category in sorted(curves):
      out.write("# {} sensitivity at {:.0%} specificity: {:.4f}\n".format(
        category, specificity, operating_point(curves[category], specificity)))

def write_spread(rows, path):
  with open(path, "w") as out:
    out.write("category\tusers\tmin\tq1\tmedian\tq3\tmax\n")
    for r in rows:
      out.write("{}\t{}\t{}\t{}\t{}\t{}\t{}\n".format(r.category, r.users, _fmt(r.minimum),
        _fmt(r.q1), _fmt(r.median), _fmt(r.q3), _fmt(r.maximum)))

def write_distribution_report(rows, path):
  with open(path, "w") as out:
    out.write("feature\tgroup\tclass\tq1\tmedian\tq3\tmean\tdensity\n")
    for r in rows:
      for label, summary in ((0, r.unattended), (1, r.attended)):
        if summary is None:
          continue
        out.write("{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n".format(r.name, r.group, label, _fmt(summary.q1),
          _fmt(summary.median), _fmt(summary.q3), _fmt(summary.mean),
          ",".join("{:.4f}".format(d) for d in summary.density)))
