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
import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time

import numpy as np

from Notif_Attendance import evaluation
from Notif_Attendance import features
from Notif_Attendance import gbt
from Notif_Attendance import pipelines
from Notif_Attendance import rnn
from Notif_Attendance import sensorevents
from Notif_Attendance import sparseencode
from Notif_Attendance import synthgen
from Notif_Attendance.evaluation import TEST
from Notif_Attendance.pipelines import EVALUATED_PARTS, MissingInputError
from Notif_Attendance.sparseencode import ModelMismatchError

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3
EXIT_MODEL_MISMATCH = 4
EXIT_DATA_ERROR = 5

def file_hash(path):
  digest = hashlib.sha256()
  with open(path, "rb") as infile:
    for block in iter(lambda: infile.read(1 << 20), b""):
      digest.update(block)
  return digest.hexdigest()

class runrecord:
  """
  Collects what one subcommand read and wrote. Written as manifest.json
  next to the artifacts; everything but the wall clock is deterministic.
  """
  def __init__(self, command, out, exp, seed):
    self.command = command
    self.out = out
    self.exp = exp
    self.seed = seed
    self.inputs = dict()
    self.artifacts = list()
    self.counts = dict()
    self.timing = dict()
    self.started = time.perf_counter()
    os.makedirs(out, exist_ok=True)

  def input(self, path):
    if not os.path.isfile(path):
      raise MissingInputError("Input file {} not found".format(path))
    self.inputs[path] = file_hash(path)
    return path

  def artifact(self, name):
    self.artifacts.append(name)
    return os.path.join(self.out, name)

  def count(self, name, value):
    self.counts[name] = value

  def dataset(self, directory):
    self.input(os.path.join(directory, "events.tsv"))
    self.input(os.path.join(directory, "demographics.tsv"))
    data = pipelines.dataset.load(directory, self.exp.base.horizon)
    self.count("users", len(data.traces))
    self.count("notifications", sum(len(v) for v in data.labels.values()))
    return data

  def write(self):
    record = {
      "command": self.command,
      "seed": self.seed,
      "inputs": self.inputs,
      "artifacts": self.artifacts,
      "counts": self.counts,
      "config": self.exp.as_dict(),
      "timing": self.timing,
      "wall_clock_s": round(time.perf_counter() - self.started, 3),
    }
    with open(os.path.join(self.out, "manifest.json"), "w") as out:
      json.dump(record, out, sort_keys=True, indent=2)
      out.write("\n")

def _split(data, exp, run):
  datasplit = evaluation.split(data.traces, exp.scoring.split_spec(run.seed))
  run.count("holdout_users", list(datasplit.holdout_users))
  run.count("boundary_days", list(datasplit.boundary_days()))
  return datasplit

def _write_reports(run, result):
  for part in EVALUATED_PARTS:
    evaluation.write_report(result.reports[part], run.artifact("{}_report_{}.tsv".format(result.name, part)))
    run.count("{}_{}_auc".format(result.name, part), result.auc(part))

def _write_predictions(run, name, scored):
  """ scored: part to (predictionset, post times) """
  with open(run.artifact(name), "w") as out:
    out.write("user_id\tcategory\tpost_time\tpart\tlabel\tscore\n")
    for part in EVALUATED_PARTS:
      predictions, times = scored[part]
      for i in range(len(predictions)):
        out.write("{}\t{}\t{}\t{}\t{}\t{:.6f}\n".format(predictions.users[i], predictions.categories[i],
          repr(float(times[i])), part, int(predictions.labels[i]), predictions.scores[i]))

def cmd_generate(args, exp, run):
  traces = synthgen.generate(exp.synth)
  synthgen.write_dataset(traces, run.out, exp.synth)
  run.artifacts.extend(["events.tsv", "demographics.tsv", "genconfig.json"])
  data = pipelines.dataset(traces, exp.base.horizon)
  synthgen.write_summary(synthgen.summarize(traces, data.labels, exp.base.horizon), run.artifact("summary.tsv"))
  run.count("users", len(traces))
  run.count("events", sum(len(t.events) for t in traces))

def cmd_label(args, exp, run):
  data = run.dataset(args.data)
  sensorevents.write_labels(data.labels, run.artifact("labels.tsv"))
  labels = data.all_labels()
  run.count("positives", sum(n.label for n in labels))
  run.count("truncated", sum(1 for n in labels if n.truncated))
  invalid = 0
  for trace in data.traces:
    report = sensorevents.validate_trace(trace)
    invalid += len(report)
    for v in report.violations[:5]:
      logging.getLogger(__name__).warning("User %s event %d: %s", trace.user_id, v.index, v.message)
  run.count("violations", invalid)

def cmd_encode(args, exp, run):
  data = run.dataset(args.data)
  schema = sparseencode.build_schema()
  streams, before, after = pipelines.encode_streams(data, schema)
  sparseencode.write_samples(streams, run.artifact("samples.tsv"), schema)
  run.count("schema_hash", schema.hash)
  run.count("samples_before", before)
  run.count("samples_after", after)

def cmd_compress(args, exp, run):
  schema = sparseencode.build_schema()
  source = run.input(os.path.join(args.data, "samples.tsv"))
  schema_hash, streams = sparseencode.read_samples(source, schema)
  before = sum(len(s) for s in streams.values())
  compressed = dict((u, sparseencode.compress(s, exp.encoding)) for u, s in streams.items())
  after = sum(len(s) for s in compressed.values())
  sparseencode.write_samples(compressed, run.artifact("samples_compressed.tsv"), schema)
  run.count("samples_before", before)
  run.count("samples_after", after)
  run.count("compression_ratio", sparseencode.compression_ratio(before, after))

def cmd_features(args, exp, run):
  data = run.dataset(args.data)
  matrix = features.build_feature_matrix(data.traces, data.labels, exp.base.windows())
  features.write_feature_matrix(matrix, run.artifact("features.tsv"))
  run.count("features", len(matrix.manifest))
  run.count("rows", len(matrix))

def cmd_train_gbt(args, exp, run):
  data = run.dataset(args.data)
  result = pipelines.run_classical(data, _split(data, exp, run), exp)
  gbt.write_model(result.model, run.artifact("gbt_model.txt"), exp.trees)
  _write_reports(run, result)
  run.count("gbt_grid", [list(g) for g in result.details["grid"]])
  run.count("train_rows", result.details["train_rows"])

def cmd_predict_gbt(args, exp, run):
  data = run.dataset(args.data)
  manifest = features.feature_manifest(None, exp.base.windows())
  ensemble = gbt.read_model(run.input(os.path.join(run.out, "gbt_model.txt")), features.manifest_hash(manifest))
  datasplit = _split(data, exp, run)
  matrix = features.build_feature_matrix(data.traces, data.labels, exp.base.windows())
  parts = pipelines.part_of_rows(matrix, datasplit)
  scored = dict()
  for part in EVALUATED_PARTS:
    rows = matrix.subset(parts == part)
    scores = gbt.predict(ensemble, rows.X) if len(rows) else np.zeros(0)
    scored[part] = (evaluation.predictionset(scores, rows.labels, rows.users, rows.categories), rows.post_times)
    run.count("gbt_{}_auc".format(part), evaluation.aggregate(scored[part][0]).global_auc)
  _write_predictions(run, "gbt_predictions.tsv", scored)

def cmd_train_rnn(args, exp, run):
  data = run.dataset(args.data)
  result = pipelines.run_recurrent(data, _split(data, exp, run), exp)
  schema = result.details["schema"]
  rnn.write_model(result.model, run.artifact("rnn_model.bin"), exp.network, schema.hash)
  sparseencode.write_normalization(result.details["stats"], run.artifact("rnn_normalization.json"),
    schema.hash, exp.encoding if exp.base.compress else None)
  with open(run.artifact("rnn_history.tsv"), "w") as out:
    out.write("epoch\ttrain_loss\tvalidation_auc\tbest\n")
    for h in result.details["history"]:
      out.write("{}\t{:.6f}\t{}\t{}\n".format(h.epoch, h.train_loss,
        "" if h.metric is None else "{:.6f}".format(h.metric), int(h.improved)))
  _write_reports(run, result)
  run.count("samples_before", result.details["samples_before"])
  run.count("samples_after", result.details["samples_after"])
  run.timing["epoch_seconds"] = [round(h.seconds, 3) for h in result.details["history"]]

def cmd_predict_rnn(args, exp, run):
  data = run.dataset(args.data)
  schema = sparseencode.build_schema()
  stats, compression = sparseencode.read_normalization(
    run.input(os.path.join(run.out, "rnn_normalization.json")), schema.hash)
  params, header = rnn.read_model(run.input(os.path.join(run.out, "rnn_model.bin")), schema.hash)
  datasplit = _split(data, exp, run)
  streams, before, after = pipelines.encode_streams(data, schema, compression)
  scorer = pipelines.streamscorer(streams, schema, stats, params.dtype)
  scored = scorer.score(params, datasplit, EVALUATED_PARTS)
  for part in EVALUATED_PARTS:
    run.count("rnn_{}_auc".format(part), evaluation.aggregate(scored[part][0]).global_auc)
  _write_predictions(run, "rnn_predictions.tsv", scored)
  run.count("samples_before", before)
  run.count("samples_after", after)

def cmd_evaluate(args, exp, run):
  data = run.dataset(args.data)
  datasplit = _split(data, exp, run)
  results = list()
  if "gbt" in args.models:
    results.append(pipelines.run_classical(data, datasplit, exp))
  if "rnn" in args.models:
    results.append(pipelines.run_recurrent(data, datasplit, exp))
    run.count("samples_before", results[-1].details["samples_before"])
    run.count("samples_after", results[-1].details["samples_after"])
  if "baseline" in args.models:
    results.append(pipelines.run_baseline(data, datasplit, exp, run.seed))
  with open(run.artifact("evaluate.tsv"), "w") as out:
    out.write("model\tpart\tauc\tusers\tskipped_cells\n")
    for result in results:
      _write_reports(run, result)
      for part in EVALUATED_PARTS:
        report = result.reports[part]
        out.write("{}\t{}\t{}\t{}\t{}\n".format(result.name, part,
          "" if report.global_auc is None else "{:.6f}".format(report.global_auc),
          len(report.user_auc), len(report.skipped)))

  if args.compare_compression:
    rows = pipelines.compare_compression(data, datasplit, exp)
    with open(run.artifact("compression.tsv"), "w") as out:
      out.write("compressed\tsamples\ttrain_samples\ttest_auc\tunknown_test_auc\n")
      for r in rows:
        out.write("{}\t{}\t{}\t{}\t{}\n".format(int(r["compressed"]), r["samples"], r["train_samples"],
          "" if r["test_auc"] is None else "{:.6f}".format(r["test_auc"]),
          "" if r["unknown_test_auc"] is None else "{:.6f}".format(r["unknown_test_auc"])))
    run.timing["mean_epoch_seconds"] = dict(("compressed" if r["compressed"] else "raw", r["mean_epoch_seconds"])
      for r in rows)

def cmd_ablate(args, exp, run):
  data = run.dataset(args.data)
  seeds = [run.seed + k for k in range(exp.scoring.ablation_seeds)]
  results = evaluation.sensor_importance(pipelines.ablation_factory(data, exp, args.model), seeds)
  evaluation.write_importance(results, run.artifact("importance_{}.tsv".format(args.model)))

def cmd_trials(args, exp, run):
  data = run.dataset(args.data)
  n = exp.scoring.trials
  stats = evaluation.run_trials(pipelines.trial_runner(data, exp, args.models), n,
    [run.seed + k for k in range(n)])
  evaluation.write_trials(stats, run.artifact("trials.tsv"))

def cmd_report(args, exp, run):
  data = run.dataset(args.data)
  synthgen.write_summary(synthgen.summarize(data.traces, data.labels, exp.base.horizon),
    run.artifact("summary.tsv"))
  matrix = features.build_feature_matrix(data.traces, data.labels, exp.base.windows())
  evaluation.write_distribution_report(evaluation.feature_distribution_report(matrix),
    run.artifact("distribution.tsv"))
  result = pipelines.run_classical(data, _split(data, exp, run), exp, matrix=matrix)
  report = result.reports[TEST]
  evaluation.write_curves(evaluation.category_roc_curves(report, exp.scoring.roc_grid_points),
    run.artifact("curves.tsv"), exp.scoring.specificity)
  evaluation.write_spread(evaluation.category_auc_spread(report), run.artifact("spread.tsv"))

def cmd_weighting(args, exp, run):
  data = run.dataset(args.data)
  models = [m for m in args.models if m in ("gbt", "rnn")]
  rows = pipelines.compare_weighting(data, _split(data, exp, run), exp, models)
  with open(run.artifact("weighting.tsv"), "w") as out:
    out.write("scheme\t" + "\t".join(models) + "\n")
    for r in rows:
      out.write(r["scheme"] + "".join("\t" + ("" if r[m] is None else "{:.6f}".format(r[m])) for m in models) + "\n")

COMMANDS = {
  "generate": (cmd_generate, "Generate a synthetic study"),
  "label": (cmd_label, "Label notifications as attended or not"),
  "encode": (cmd_encode, "Encode event streams as sparse samples"),
  "compress": (cmd_compress, "Losslessly compress encoded samples"),
  "features": (cmd_features, "Extract windowed features per notification"),
  "train-gbt": (cmd_train_gbt, "Train the boosted tree model"),
  "predict-gbt": (cmd_predict_gbt, "Score notifications with a trained boosted tree model"),
  "train-rnn": (cmd_train_rnn, "Train the recurrent model"),
  "predict-rnn": (cmd_predict_rnn, "Score notifications with a trained recurrent model"),
  "evaluate": (cmd_evaluate, "Train and evaluate models on one split"),
  "ablate": (cmd_ablate, "Sensor importance by ablation"),
  "trials": (cmd_trials, "Repeat evaluation over random splits"),
  "report": (cmd_report, "Dataset summary, feature distributions and ROC curves"),
  "weighting": (cmd_weighting, "Compare instance weighting schemes"),
}

def build_parser():
  parser = argparse.ArgumentParser(prog="notif-attendance",
    description="Notification attendance prediction from phone sensor event streams")
  parser.add_argument("command", choices=sorted(COMMANDS), help="Stage to run")
  parser.add_argument("--config", help="Directory holding config_*.json files", default=".")
  parser.add_argument("--data", help="Dataset directory with events.tsv and demographics.tsv; for compress, the directory holding samples.tsv written by encode", default="data")
  parser.add_argument("--out", help="Directory for artifacts and manifest.json", default="out")
  parser.add_argument("--seed", help="Seed for generation, splits and learners", type=int)
  parser.add_argument("--weighting", help="Instance weighting scheme",
    choices=["inv", "inv-sqrt", "inv-log", "uniform"])
  parser.add_argument("--seq-len", help="Truncated backpropagation length", type=int)
  parser.add_argument("--no-compress", help="Train the recurrent model on uncompressed samples",
    action="store_true")
  parser.add_argument("--trials", help="Number of random splits for the trials command", type=int)
  parser.add_argument("--models", help="Comma separated subset of gbt,rnn,baseline", default="gbt,rnn,baseline")
  parser.add_argument("--model", help="Model used by ablate", choices=["gbt", "rnn"], default="gbt")
  parser.add_argument("--compare-compression", help="evaluate also trains on raw samples", action="store_true")
  parser.add_argument("-v", "--verbose", help="Debug logging", action="store_true")
  return parser

def apply_flags(exp, args):
  """ Command line flags take precedence over config file values. """
  base = exp.base
  if args.seed is not None:
    exp = exp.with_seed(args.seed)
    exp = dataclasses.replace(exp, synth=dataclasses.replace(exp.synth, seed=args.seed))
    base = exp.base
  if args.weighting is not None:
    base = dataclasses.replace(base, weighting=args.weighting)
  if args.no_compress:
    base = dataclasses.replace(base, compress=False)
  exp = dataclasses.replace(exp, base=base)
  if args.seq_len is not None:
    network = dataclasses.replace(exp.network, seq_len=args.seq_len)
    network.validate()
    exp = dataclasses.replace(exp, network=network)
  if args.trials is not None:
    if args.trials < 1:
      raise ValueError("--trials must be at least 1, got {}".format(args.trials))
    exp = dataclasses.replace(exp, scoring=dataclasses.replace(exp.scoring, trials=args.trials))
  return exp

def run(argv=None):
  parser = build_parser()
  args = parser.parse_args(argv)
  args.models = [m.strip() for m in args.models.split(",") if m.strip()]
  unknown = [m for m in args.models if m not in pipelines.MODELS]
  if unknown:
    parser.error("Unknown model(s) {}".format(", ".join(unknown)))

  logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
    format="%(asctime)s %(levelname)s %(name)s: %(message)s")
  log = logging.getLogger(__name__)

  try:
    exp = apply_flags(pipelines.experiment.load(args.config), args)
    record = runrecord(args.command, args.out, exp, exp.base.seed)
    handler = COMMANDS[args.command][0]
    handler(args, exp, record)
    record.write()
  except MissingInputError as mie:
    log.error("%s", mie)
    return EXIT_MISSING_INPUT
  except FileNotFoundError as fnf:
    log.error("Missing input: %s", fnf)
    return EXIT_MISSING_INPUT
  except ModelMismatchError as mme:
    log.error("%s", mme)
    return EXIT_MODEL_MISMATCH
  except ValueError as ve:
    log.error("%s", ve)
    return EXIT_DATA_ERROR
  except Exception:
    log.exception("%s failed", args.command)
    return EXIT_FAILURE
  log.info("%s wrote %s to %s", args.command, ", ".join(record.artifacts), args.out)
  return EXIT_OK

def main():
  sys.exit(run())
