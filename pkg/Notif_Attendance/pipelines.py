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
import dataclasses
import logging
import os

import numpy as np

from Notif_Attendance import configuration
from Notif_Attendance import evaluation
from Notif_Attendance import features
from Notif_Attendance import gbt
from Notif_Attendance import rnn
from Notif_Attendance import sensorevents
from Notif_Attendance import sequencing
from Notif_Attendance import sparseencode
from Notif_Attendance import synthgen
from Notif_Attendance import weighting
from Notif_Attendance.evaluation import TRAIN, VALIDATION, TEST, UNKNOWN_TEST

EVALUATED_PARTS = (VALIDATION, TEST, UNKNOWN_TEST)

class MissingInputError(ValueError):
  """ Raised when a stage's input file is not there. """

@dataclasses.dataclass(frozen=True)
class experimentconfig:
  """ Contents of config_experiment.json """
  seed: int = 0
  weighting: str = weighting.DEFAULT_SCHEME.value
  compress: bool = True
  horizon: float = sensorevents.DEFAULT_HORIZON
  moment_s: float = 300.0
  recent_s: float = 3600.0
  day_start_hour: int = 5
  holidays: tuple = ()

  def windows(self):
    return features.windowspec(self.moment_s, self.recent_s, self.day_start_hour, tuple(self.holidays))

  def scheme(self):
    return weighting.scheme_from_name(self.weighting)

@dataclasses.dataclass(frozen=True)
class experiment:
  """ Every component configuration of one run. """
  base: experimentconfig = dataclasses.field(default_factory=experimentconfig)
  synth: synthgen.genconfig = dataclasses.field(default_factory=synthgen.genconfig)
  encoding: sparseencode.compressionconfig = dataclasses.field(default_factory=sparseencode.compressionconfig)
  trees: gbt.gbtconfig = dataclasses.field(default_factory=gbt.gbtconfig)
  network: rnn.rnnconfig = dataclasses.field(default_factory=rnn.rnnconfig)
  scoring: evaluation.evaluationconfig = dataclasses.field(default_factory=evaluation.evaluationconfig)

  @classmethod
  def load(cls, directory=None):
    """
    Reads config_experiment.json, config_synthgen.json,
    config_encoding.json, config_gbt.json, config_rnn.json and
    config_evaluation.json from 'directory'. Missing files mean defaults.
    """
    def section(name):
      return configuration.configuration(name, directory).load()

    loaded = cls(
      base=configuration.merge(experimentconfig(), section("experiment")),
      synth=synthgen.genconfig.from_dict(section("synthgen")),
      encoding=configuration.merge(sparseencode.compressionconfig(), section("encoding")),
      trees=gbt.gbtconfig.from_dict(section("gbt")),
      network=rnn.rnnconfig.from_dict(section("rnn")),
      scoring=evaluation.evaluationconfig.from_dict(section("evaluation")))
    loaded.base.scheme()
    return loaded

  def with_seed(self, seed):
    """ Same experiment with every seed set to 'seed' """
    return dataclasses.replace(self,
      base=dataclasses.replace(self.base, seed=seed),
      trees=dataclasses.replace(self.trees, seed=seed),
      network=dataclasses.replace(self.network, seed=seed))

  def as_dict(self):
    return dict((f.name, configuration.as_dict(getattr(self, f.name))) for f in dataclasses.fields(self))

class dataset:
  """ Traces with their notification labels """
  def __init__(self, traces, horizon=sensorevents.DEFAULT_HORIZON):
    self.traces = list(traces)
    self.horizon = horizon
    self.labels = dict((t.user_id, sensorevents.label_notifications(t, horizon)) for t in self.traces)

  @classmethod
  def load(cls, directory, horizon=sensorevents.DEFAULT_HORIZON):
    events_path = os.path.join(directory, "events.tsv")
    demographics_path = os.path.join(directory, "demographics.tsv")
    for path in (events_path, demographics_path):
      if not os.path.isfile(path):
        raise MissingInputError("Dataset file {} not found".format(path))
    return cls(sensorevents.read_event_log(events_path, demographics_path), horizon)

  def trace(self, user_id):
    for t in self.traces:
      if t.user_id == user_id:
        return t
    raise KeyError(user_id)

  def all_labels(self):
    return [n for t in self.traces for n in self.labels[t.user_id]]

@dataclasses.dataclass
class runresult:
  name: str
  reports: dict
  predictions: dict
  model: object = None
  details: dict = dataclasses.field(default_factory=dict)

  def auc(self, part=TEST):
    report = self.reports.get(part)
    return report.global_auc if report is not None else None

  def metrics(self):
    return dict(("{}_{}".format(self.name, part), self.auc(part)) for part in EVALUATED_PARTS)

def _evaluated(predictions, truncated, exclude_truncated):
  if exclude_truncated and len(predictions):
    predictions = predictions.subset(~np.asarray(truncated, dtype=bool))
  return predictions

def select_features(matrix, manifest):
  """ Feature matrix restricted to the features of 'manifest' """
  position = dict((name, j) for j, name in enumerate(matrix.names))
  columns = [position[f.name] for f in manifest]
  return features.featurematrix(manifest, matrix.X[:, columns], matrix.labels, matrix.users,
    matrix.categories, matrix.post_times, matrix.truncated)

def part_of_rows(matrix, datasplit):
  return np.array([datasplit.part(u, t) for u, t in zip(matrix.users, matrix.post_times)], dtype=object)

def run_classical(data, datasplit, exp, ablate=frozenset(), matrix=None, scheme=None):
  """
  Windowed features, training weights, boosted trees and their
  predictions on the validation, test and unknown test parts.
  """
  schema = sparseencode.build_schema(ablate=ablate)
  manifest = features.feature_manifest(schema, exp.base.windows())
  if matrix is None:
    matrix = features.build_feature_matrix(data.traces, data.labels, exp.base.windows(), schema)
  elif [f.name for f in manifest] != matrix.names:
    matrix = select_features(matrix, manifest)

  parts = part_of_rows(matrix, datasplit)
  train = matrix.subset(parts == TRAIN)
  table = weighting.build_frequency_table(train.instances())
  w = weighting.assign_weights(train.instances(), table, scheme or exp.base.scheme())
  val = matrix.subset(parts == VALIDATION)
  validation = (val.X, val.labels, val.users, val.categories) if len(val) else None

  ensemble = gbt.train(train.X, train.labels, w, exp.trees, validation)
  ensemble.manifest_hash = features.manifest_hash(manifest)

  reports, predictions = dict(), dict()
  for part in EVALUATED_PARTS:
    rows = matrix.subset(parts == part)
    scores = gbt.predict(ensemble, rows.X) if len(rows) else np.zeros(0)
    predictions[part] = _evaluated(evaluation.predictionset(scores, rows.labels, rows.users, rows.categories),
      rows.truncated, exp.scoring.exclude_truncated)
    reports[part] = evaluation.aggregate(predictions[part])
  return runresult("gbt", reports, predictions, ensemble,
    {"features": len(manifest), "train_rows": len(train), "grid": ensemble.grid_results})

def run_baseline(data, datasplit, exp, seed=None):
  """ Probability based random classifier from training positive rates """
  seed = exp.base.seed if seed is None else seed
  table = weighting.build_frequency_table(datasplit.select(data.labels, TRAIN))
  reports, predictions = dict(), dict()
  for k, part in enumerate(EVALUATED_PARTS):
    instances = datasplit.select(data.labels, part)
    scores = evaluation.baseline_predict(table, instances, seed + k)
    predictions[part] = _evaluated(evaluation.predictionset(scores, [n.label for n in instances],
      [n.user_id for n in instances], [n.category for n in instances]),
      [n.truncated for n in instances], exp.scoring.exclude_truncated)
    reports[part] = evaluation.aggregate(predictions[part])
  return runresult("baseline", reports, predictions, table)

def encode_streams(data, schema, compression=None):
  """
  Sample stream per user, compressed unless 'compression' is None.
  Returns the streams and the sample counts before and after.
  """
  streams, before, after = dict(), 0, 0
  for trace in data.traces:
    samples = sparseencode.encode_events(trace, data.labels[trace.user_id], schema)
    before += len(samples)
    if compression is not None:
      samples = sparseencode.compress(samples, compression)
    after += len(samples)
    streams[trace.user_id] = samples
  if compression is not None:
    logging.getLogger(__name__).info("Compressed %d samples to %d (%.1fx)", before, after,
      sparseencode.compression_ratio(before, after))
  return streams, before, after

def _reweight(streams, table, scheme):
  out = dict()
  for user_id, samples in streams.items():
    out[user_id] = [dataclasses.replace(s, w=weighting.weight(s, table, scheme)) if s.y is not None else s
      for s in samples]
  return out

class streamscorer:
  """
  Scores the labeled samples of whole user streams with a trained network,
  each user starting from zero state at the first sample of the study.
  """
  def __init__(self, streams, schema, stats, dtype):
    self.dense = dict()
    self.labeled = dict()
    for user_id, samples in streams.items():
      normalized = sparseencode.apply_normalization(samples, stats)
      X, y, w = sparseencode.dense_matrix(normalized, schema, dtype)
      self.dense[user_id] = X
      self.labeled[user_id] = [(i, s) for i, s in enumerate(samples) if s.y is not None]

  def score(self, params, datasplit, parts, users=None, until=None):
    """ predictionset per part for the given users' labeled samples """
    users = list(users) if users is not None else list(self.dense)
    inputs = dict()
    for u in users:
      X = self.dense[u]
      if until is not None:
        keep = sum(1 for i, s in self.labeled[u] if s.t < until)
        last = self.labeled[u][keep - 1][0] + 1 if keep else 0
        X = X[:last]
      inputs[u] = X
    probabilities = rnn.predict_streams(params, inputs)

    collected = dict((p, ([], [], [], [], [])) for p in parts)
    for u in users:
      for i, s in self.labeled[u]:
        if i >= len(probabilities[u]):
          break
        part = datasplit.part(u, s.t)
        if part in collected:
          scores, labels, us, cats, times = collected[part]
          scores.append(float(probabilities[u][i]))
          labels.append(s.y)
          us.append(u)
          cats.append(s.category)
          times.append(s.t)
    return dict((p, (evaluation.predictionset(c[0], c[1], c[2], c[3]), c[4])) for p, c in collected.items())

def run_recurrent(data, datasplit, exp, ablate=frozenset(), compress=None, scheme=None):
  """
  Encode, optionally compress, weight, normalize and bucket the training
  period of the known users, train the network, then replay every user's
  full stream to score validation, test and unknown test notifications.
  """
  compress = exp.base.compress if compress is None else compress
  schema = sparseencode.build_schema(ablate=ablate)
  streams, before, after = encode_streams(data, schema, exp.encoding if compress else None)

  train_streams = dict()
  for user_id in datasplit.known_users:
    kept = [s for s in streams[user_id] if s.t < datasplit.train_end]
    if kept:
      train_streams[user_id] = kept
  labeled = [s for samples in train_streams.values() for s in samples if s.y is not None]
  table = weighting.build_frequency_table(labeled)
  train_streams = _reweight(train_streams, table, scheme or exp.base.scheme())
  stats = sparseencode.fit_normalization([s for samples in train_streams.values() for s in samples], schema.width)
  normalized = dict((u, sparseencode.apply_normalization(s, stats)) for u, s in train_streams.items())
  buckets = sequencing.build_buckets(normalized, exp.network.sequencing_config())

  scorer = streamscorer(streams, schema, stats, exp.network.dtype)

  def validate(params):
    scored = scorer.score(params, datasplit, (VALIDATION,), datasplit.known_users, datasplit.val_end)
    return evaluation.aggregate(scored[VALIDATION][0]).global_auc

  params, history = rnn.train(buckets, schema, exp.network, validate)

  truncated = set((n.user_id, n.post_time) for n in data.all_labels() if n.truncated)
  reports, predictions = dict(), dict()
  for part, (scored, times) in scorer.score(params, datasplit, EVALUATED_PARTS).items():
    flags = [(u, t) in truncated for u, t in zip(scored.users, times)]
    predictions[part] = _evaluated(scored, flags, exp.scoring.exclude_truncated)
    reports[part] = evaluation.aggregate(predictions[part])

  epoch_seconds = [h.seconds for h in history]
  return runresult("rnn", reports, predictions, params, {
    "schema": schema, "stats": stats, "history": history,
    "samples_before": before, "samples_after": after,
    "train_samples": sum(len(s) for s in train_streams.values()),
    "mean_epoch_seconds": float(np.mean(epoch_seconds)) if epoch_seconds else None})

MODELS = ("gbt", "rnn", "baseline")

def trial_runner(data, exp, models=MODELS):
  """
  Callable for evaluation.run_trials: each seed redraws the held out users
  and reseeds every learner.
  """
  matrix = dict()

  def run(seed):
    trial = exp.with_seed(seed)
    datasplit = evaluation.split(data.traces, trial.scoring.split_spec(seed))
    metrics = dict()
    if "gbt" in models:
      if "full" not in matrix:
        matrix["full"] = features.build_feature_matrix(data.traces, data.labels, trial.base.windows())
      metrics.update(run_classical(data, datasplit, trial, matrix=matrix["full"]).metrics())
    if "rnn" in models:
      metrics.update(run_recurrent(data, datasplit, trial).metrics())
    if "baseline" in models:
      metrics.update(run_baseline(data, datasplit, trial, seed).metrics())
    return metrics
  return run

def ablation_factory(data, exp, model="gbt"):
  """
  Callable for evaluation.sensor_importance: factory(seed, ablate) trains
  the chosen model without the ablated sensors and returns its test AUC.
  """
  cache = dict()

  def run(seed, ablate):
    trial = exp.with_seed(seed)
    datasplit = evaluation.split(data.traces, trial.scoring.split_spec(seed))
    if model == "gbt":
      if "full" not in cache:
        cache["full"] = features.build_feature_matrix(data.traces, data.labels, trial.base.windows())
      return run_classical(data, datasplit, trial, ablate, matrix=cache["full"]).auc(TEST)
    if model == "rnn":
      return run_recurrent(data, datasplit, trial, ablate).auc(TEST)
    raise ValueError("Sensor importance needs model gbt or rnn, got {}".format(model))
  return run

def compare_weighting(data, datasplit, exp, models=("gbt",)):
  """ Test AUC of each model under every weighting scheme """
  rows = list()
  matrix = None
  for scheme in weighting.WeightScheme:
    row = {"scheme": scheme.value}
    if "gbt" in models:
      if matrix is None:
        matrix = features.build_feature_matrix(data.traces, data.labels, exp.base.windows())
      row["gbt"] = run_classical(data, datasplit, exp, matrix=matrix, scheme=scheme).auc(TEST)
    if "rnn" in models:
      row["rnn"] = run_recurrent(data, datasplit, exp, scheme=scheme).auc(TEST)
    logging.getLogger(__name__).info("Weighting %s: %s", scheme.value, row)
    rows.append(row)
  return rows

def compare_compression(data, datasplit, exp):
  """ Network trained on compressed and on raw streams, side by side """
  rows = list()
  for compress in (True, False):
    result = run_recurrent(data, datasplit, exp, compress=compress)
    rows.append({
      "compressed": compress,
      "samples": result.details["samples_after"],
      "train_samples": result.details["train_samples"],
      "mean_epoch_seconds": result.details["mean_epoch_seconds"],
      "test_auc": result.auc(TEST),
      "unknown_test_auc": result.auc(UNKNOWN_TEST)})
  return rows
