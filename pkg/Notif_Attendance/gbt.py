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
import json
import logging
import math

import numpy as np

from Notif_Attendance import configuration
from Notif_Attendance import evaluation
from Notif_Attendance.sparseencode import ModelMismatchError

MODEL_FILE_MAGIC = "#notif-gbt"
MODEL_FILE_VERSION = "v1"

class GbtError(ValueError):
  """ Raised for training data or inputs the booster can not work with. """

@dataclasses.dataclass(frozen=True)
class gbtconfig:
  n_estimators: int = 101
  max_depth_grid: tuple = (3, 4, 5, 6, 8)
  subsample_grid: tuple = (0.5, 0.7, 0.8, 1.0)
  learning_rate: float = 0.1
  reg_lambda: float = 1.0
  min_child_hessian: float = 1e-3
  seed: int = 0

  def validate(self):
    if self.n_estimators < 0:
      raise configuration.ConfigError("n_estimators must not be negative")
    if not self.max_depth_grid or not self.subsample_grid:
      raise configuration.ConfigError("GBT grids must not be empty")
    for d in self.max_depth_grid:
      if d < 1:
        raise configuration.ConfigError("max_depth {} must be at least 1".format(d))
    for s in self.subsample_grid:
      if not 0 < s <= 1:
        raise configuration.ConfigError("subsample {} must lie in (0,1]".format(s))
    if self.learning_rate <= 0 or self.reg_lambda < 0:
      raise configuration.ConfigError("learning_rate must be positive and reg_lambda not negative")

  @classmethod
  def from_dict(cls, values):
    config = configuration.merge(cls(), values)
    config.validate()
    return config

def sigmoid(z):
  return 1.0 / (1.0 + np.exp(-z))

def weighted_log_loss(p, y, w, eps=1e-12):
  p = np.clip(p, eps, 1.0 - eps)
  return float(np.sum(w * -(y * np.log(p) + (1 - y) * np.log(1 - p))) / np.sum(w))

class regressiontree:
  """
  Binary tree stored as parallel node arrays. Internal nodes send a row
  left when its value is below the threshold, and missing values (NaN)
  the way 'missing_left' says. Leaves have feature -1.
  """
  def __init__(self):
    self.feature = list()
    self.threshold = list()
    self.missing_left = list()
    self.left = list()
    self.right = list()
    self.value = list()

  def add_node(self, value=0.0):
    self.feature.append(-1)
    self.threshold.append(0.0)
    self.missing_left.append(True)
    self.left.append(-1)
    self.right.append(-1)
    self.value.append(float(value))
    return len(self.feature) - 1

  def split(self, node, feature, threshold, missing_left):
    self.feature[node] = int(feature)
    self.threshold[node] = float(threshold)
    self.missing_left[node] = bool(missing_left)
    self.left[node] = self.add_node()
    self.right[node] = self.add_node()
    return self.left[node], self.right[node]

  @property
  def num_nodes(self):
    return len(self.feature)

  def depth(self, node=0):
    if self.feature[node] < 0:
      return 0
    return 1 + max(self.depth(self.left[node]), self.depth(self.right[node]))

  def predict(self, X):
    feature = np.asarray(self.feature)
    threshold = np.asarray(self.threshold)
    missing_left = np.asarray(self.missing_left)
    left = np.asarray(self.left)
    right = np.asarray(self.right)
    node = np.zeros(len(X), dtype=int)
    while True:
      active = np.flatnonzero(feature[node] >= 0)
      if len(active) == 0:
        break
      at = node[active]
      xv = X[active, feature[at]]
      go_left = np.where(np.isnan(xv), missing_left[at], xv < threshold[at])
      node[active] = np.where(go_left, left[at], right[at])
    return np.asarray(self.value)[node]

class gbtensemble:
  def __init__(self, base_score, learning_rate, width, trees=None, max_depth=None,
      subsample=None, seed=0, manifest_hash=None):
    self.base_score = float(base_score)
    self.learning_rate = float(learning_rate)
    self.width = int(width)
    self.trees = list(trees or [])
    self.max_depth = max_depth
    self.subsample = subsample
    self.seed = seed
    self.manifest_hash = manifest_hash
    # Weighted training log-loss after 0, 1, ... stages.
    self.history = list()
    self.validation_auc = None
    self.grid_results = list()

  def margin(self, X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != self.width:
      raise GbtError("Rows have {} features, model expects {}".format(
        X.shape[-1] if X.ndim else 0, self.width))
    total = np.full(len(X), self.base_score)
    for tree in self.trees:
      total += self.learning_rate * tree.predict(X)
    return total

def predict(ensemble, rows):
  """ Attendance probabilities for one row or a matrix of rows """
  rows = np.asarray(rows, dtype=float)
  single = rows.ndim == 1
  p = sigmoid(ensemble.margin(rows.reshape(1, -1) if single else rows))
  return float(p[0]) if single else p

def base_score(y, w):
  total = float(np.sum(w))
  if len(y) == 0 or total <= 0:
    raise GbtError("Training set is empty or carries no weight")
  rate = float(np.sum(w * y)) / total
  if rate <= 0.0 or rate >= 1.0:
    raise GbtError("Training labels are all {}: base score log-odds is infinite".format(int(round(rate))))
  return math.log(rate / (1.0 - rate))

class _grower:
  """
  Exact greedy, depth-wise tree growth. Every node keeps, per feature, the
  indices of its non-missing rows in ascending feature order, so split
  search is a cumulative sum and partitioning a stable boolean filter.
  """
  def __init__(self, X, presorted, config):
    self.X = X
    self.presorted = presorted
    self.config = config

  def _best_split(self, lists, n_rows, G, H):
    lam = self.config.reg_lambda
    minh = self.config.min_child_hessian
    parent = G * G / (H + lam)
    best = (0.0, None)
    for j, rows in enumerate(lists):
      if len(rows) < 2:
        continue
      xs = self.X[rows, j]
      GL = np.cumsum(self.g[rows])[:-1]
      HL = np.cumsum(self.h[rows])[:-1]
      cut = np.flatnonzero(xs[:-1] < xs[1:])
      if len(cut) == 0:
        continue
      GL, HL = GL[cut], HL[cut]
      if n_rows > len(rows):
        Gm = G - float(np.sum(self.g[rows]))
        Hm = H - float(np.sum(self.h[rows]))
        directions = ((True, GL + Gm, HL + Hm), (False, GL, HL))
      else:
        # Without missing rows both directions give the same partition.
        directions = ((True, GL, HL),)

      for missing_left, gl, hl in directions:
        gr, hr = G - gl, H - hl
        gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent)
        gain = np.where((hl >= minh) & (hr >= minh), gain, -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > best[0] + 1e-12:
          lo, hi = xs[cut[k]], xs[cut[k] + 1]
          threshold = 0.5 * (lo + hi)
          if not lo < threshold <= hi:
            threshold = hi
          best = (float(gain[k]), (j, threshold, missing_left))
    return best[1]

  def grow(self, g, h, sample, max_depth):
    self.g, self.h = g, h
    lam = self.config.reg_lambda
    tree = regressiontree()
    root = tree.add_node()
    in_sample = np.zeros(len(self.X), dtype=bool)
    in_sample[sample] = True
    frontier = [(root, sample, [p[in_sample[p]] for p in self.presorted])]

    for depth in range(max_depth + 1):
      next_frontier = list()
      for node, rows, lists in frontier:
        G, H = float(np.sum(g[rows])), float(np.sum(h[rows]))
        tree.value[node] = -G / (H + lam)
        if depth == max_depth or len(rows) < 2 or H < 2 * self.config.min_child_hessian:
          continue
        split = self._best_split(lists, len(rows), G, H)
        if split is None:
          continue
        j, threshold, missing_left = split
        xv = self.X[rows, j]
        go_left = np.zeros(len(self.X), dtype=bool)
        go_left[rows] = np.where(np.isnan(xv), missing_left, xv < threshold)
        left, right = tree.split(node, j, threshold, missing_left)
        next_frontier.append((left, rows[go_left[rows]], [p[go_left[p]] for p in lists]))
        next_frontier.append((right, rows[~go_left[rows]], [p[~go_left[p]] for p in lists]))
      frontier = next_frontier
      if not frontier:
        break
    return tree

def presort(X):
  """ Per feature, row indices of non-missing values in ascending order. """
  out = list()
  for j in range(X.shape[1]):
    order = np.argsort(X[:, j], kind="stable")
    out.append(order[~np.isnan(X[order, j])])
  return out

def boost(X, y, w, config, max_depth, subsample, presorted=None):
  """ One boosting run for a single grid point. """
  X = np.asarray(X, dtype=float)
  y = np.asarray(y, dtype=float)
  w = np.asarray(w, dtype=float)
  n = len(y)
  ensemble = gbtensemble(base_score(y, w), config.learning_rate, X.shape[1],
    max_depth=max_depth, subsample=subsample, seed=config.seed)
  grower = _grower(X, presorted if presorted is not None else presort(X), config)
  rng = np.random.default_rng(config.seed)
  margin = np.full(n, ensemble.base_score)
  ensemble.history.append(weighted_log_loss(sigmoid(margin), y, w))

  for stage in range(config.n_estimators):
    p = sigmoid(margin)
    g = w * (p - y)
    h = w * p * (1.0 - p)
    if subsample < 1.0:
      size = max(1, int(round(subsample * n)))
      sample = np.sort(rng.choice(n, size=size, replace=False))
    else:
      sample = np.arange(n)
    tree = grower.grow(g, h, sample, max_depth)
    ensemble.trees.append(tree)
    margin = margin + config.learning_rate * tree.predict(X)
    ensemble.history.append(weighted_log_loss(sigmoid(margin), y, w))
  return ensemble

def train(X, y, w, config=None, validation=None):
  """
  Grid search over tree depth and row subsample ratio. 'validation' is a
  tuple (X, labels, users, categories); the grid point with the best
  validation mean per user and category AUC wins, ties going to the
  earlier grid point. Without validation data the first grid point is
  used.
  """
  config = config or gbtconfig()
  config.validate()
  X = np.asarray(X, dtype=float)
  if X.ndim != 2 or len(X) != len(y) or len(y) != len(w):
    raise GbtError("Feature rows, labels and weights do not line up")
  base_score(np.asarray(y, dtype=float), np.asarray(w, dtype=float))

  grid = [(d, s) for d in config.max_depth_grid for s in config.subsample_grid]
  if validation is None:
    grid = grid[:1]
  presorted = presort(X)
  log = logging.getLogger(__name__)

  best, best_auc, results = None, None, list()
  for depth, subsample in grid:
    ensemble = boost(X, y, w, config, depth, subsample, presorted)
    auc = None
    if validation is not None:
      Xv, yv, users, categories = validation
      auc = evaluation.aggregate(evaluation.predictionset(
        predict(ensemble, Xv), yv, users, categories)).global_auc
    results.append((depth, subsample, auc))
    log.info("GBT depth=%d subsample=%.2f validation AUC %s", depth, subsample, auc)
    if best is None or (auc is not None and (best_auc is None or auc > best_auc)):
      best, best_auc = ensemble, auc

  best.validation_auc = best_auc
  best.grid_results = results
  return best

def write_model(ensemble, path, config=None):
  with open(path, "w") as out:
    out.write("{}\t{}\n".format(MODEL_FILE_MAGIC, MODEL_FILE_VERSION))
    out.write("config\t{}\n".format(json.dumps(configuration.as_dict(config) if config else {}, sort_keys=True)))
    out.write("manifest\t{}\t{}\n".format(ensemble.manifest_hash or "-", ensemble.width))
    out.write("base\t{}\t{}\n".format(repr(ensemble.base_score), repr(ensemble.learning_rate)))
    out.write("chosen\t{}\t{}\t{}\n".format(ensemble.max_depth, repr(float(ensemble.subsample or 1.0)), ensemble.seed))
    out.write("trees\t{}\n".format(len(ensemble.trees)))
    for k, tree in enumerate(ensemble.trees):
      out.write("tree\t{}\t{}\n".format(k, tree.num_nodes))
      for i in range(tree.num_nodes):
        out.write("{}\t{}\t{}\t{}\t{}\t{}\t{}\n".format(i, tree.feature[i], repr(tree.threshold[i]),
          int(tree.missing_left[i]), tree.left[i], tree.right[i], repr(tree.value[i])))

def read_model(path, manifest_hash=None):
  """ Reads a model file. A given manifest hash must match the model's. """
  with open(path, "r") as infile:
    lines = [line.rstrip("\n").split("\t") for line in infile]
  if not lines or lines[0] != [MODEL_FILE_MAGIC, MODEL_FILE_VERSION]:
    raise GbtError("{} is not a {} GBT model".format(path, MODEL_FILE_VERSION))

  model_hash, width = lines[2][1], int(lines[2][2])
  if manifest_hash is not None and model_hash != manifest_hash:
    raise ModelMismatchError("{} was trained on features {}, data has {}".format(path, model_hash, manifest_hash))
  ensemble = gbtensemble(float(lines[3][1]), float(lines[3][2]), width,
    max_depth=int(lines[4][1]), subsample=float(lines[4][2]), seed=int(lines[4][3]),
    manifest_hash=None if model_hash == "-" else model_hash)

  pos = 6
  for k in range(int(lines[5][1])):
    count = int(lines[pos][2])
    tree = regressiontree()
    for fields in lines[pos + 1:pos + 1 + count]:
      tree.feature.append(int(fields[1]))
      tree.threshold.append(float(fields[2]))
      tree.missing_left.append(fields[3] == "1")
      tree.left.append(int(fields[4]))
      tree.right.append(int(fields[5]))
      tree.value.append(float(fields[6]))
    ensemble.trees.append(tree)
    pos += 1 + count
  return ensemble
