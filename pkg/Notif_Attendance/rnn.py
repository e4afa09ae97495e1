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
import time

import numpy as np

from Notif_Attendance import configuration
from Notif_Attendance import sequencing
from Notif_Attendance.sparseencode import ModelMismatchError

MODEL_FILE_MAGIC = "notif-rnn"
MODEL_FILE_VERSION = "v1"

# Probabilities are clamped this far from 0 and 1 inside the logarithms.
LOSS_EPSILON = 1e-12

PARAM_NAMES = ("W_in", "b_in", "prelu", "W1", "U1", "b1", "W2", "U2", "b2", "w_out", "b_out")

class NumericError(ValueError):
  """ Raised when a forward or backward pass produces non-finite values. """

@dataclasses.dataclass(frozen=True)
class rnnconfig:
  embed: int = 50
  units: int = 500
  seq_len: int = 50
  batch_lo: int = 15
  batch_hi: int = 45
  learning_rate: float = 0.001
  beta1: float = 0.9
  beta2: float = 0.999
  epsilon: float = 1e-8
  patience: int = 5
  max_epochs: int = 100
  clip_norm: float = 5.0
  init_scale: float = 0.05
  prelu_init: float = 0.25
  forget_bias: float = 1.0
  seed: int = 0
  precision: str = "float64"

  def validate(self):
    if self.embed < 1 or self.units < 1:
      raise configuration.ConfigError("embed and units must be at least 1")
    if self.patience < 1:
      raise configuration.ConfigError("patience must be at least 1, got {}".format(self.patience))
    if not self.clip_norm > 0:
      raise configuration.ConfigError("clip_norm must be positive, got {}".format(self.clip_norm))
    if self.max_epochs < 1:
      raise configuration.ConfigError("max_epochs must be at least 1")
    if self.precision not in ("float64", "float32"):
      raise configuration.ConfigError("precision must be float64 or float32, got {}".format(self.precision))
    sequencing.sequencingconfig(self.seq_len, self.batch_lo, self.batch_hi)

  @property
  def dtype(self):
    return np.dtype(self.precision)

  def sequencing_config(self):
    return sequencing.sequencingconfig(self.seq_len, self.batch_lo, self.batch_hi)

  @classmethod
  def from_dict(cls, values):
    config = configuration.merge(cls(), values)
    config.validate()
    return config

class rnnparams:
  """
  Named parameter arrays: input embedding W_in, b_in with PReLU slopes,
  two LSTM layers (input weights W, recurrent weights U, bias b, gates
  stacked in the order input, forget, output, candidate) and the sigmoid
  head w_out, b_out.
  """
  def __init__(self, arrays):
    missing = [n for n in PARAM_NAMES if n not in arrays]
    if missing:
      raise ValueError("Missing parameters {}".format(", ".join(missing)))
    self.arrays = dict((n, arrays[n]) for n in PARAM_NAMES)

  def __getitem__(self, name):
    return self.arrays[name]

  def __setitem__(self, name, value):
    self.arrays[name] = value

  @property
  def input_width(self):
    return self.arrays["W_in"].shape[0]

  @property
  def embed(self):
    return self.arrays["W_in"].shape[1]

  @property
  def units(self):
    return self.arrays["U1"].shape[0]

  @property
  def dtype(self):
    return self.arrays["W_in"].dtype

  def copy(self):
    return rnnparams(dict((n, a.copy()) for n, a in self.arrays.items()))

  def zeros_like(self):
    return rnnparams(dict((n, np.zeros_like(a)) for n, a in self.arrays.items()))

  def is_finite(self):
    return all(np.all(np.isfinite(a)) for a in self.arrays.values())

  def shapes(self):
    return dict((n, list(a.shape)) for n, a in self.arrays.items())

def init_params(input_width, config, row_selection=None):
  """
  Uniform +-init_scale weights, zero biases except the forget gate, PReLU
  slopes at prelu_init. W_in is drawn for 'input_width' rows and then
  reduced to 'row_selection', so a run with fewer input columns starts
  from the same values for the columns it keeps.
  """
  rng = np.random.default_rng(config.seed)
  s, E, H = config.init_scale, config.embed, config.units
  dtype = config.dtype

  def uniform(*shape):
    return rng.uniform(-s, s, size=shape).astype(dtype)

  W_in = uniform(input_width, E)
  if row_selection is not None:
    W_in = W_in[np.asarray(row_selection, dtype=int)]

  def lstm_bias():
    b = np.zeros(4 * H, dtype=dtype)
    b[H:2 * H] = config.forget_bias
    return b

  arrays = dict()
  arrays["W_in"] = W_in
  arrays["b_in"] = np.zeros(E, dtype=dtype)
  arrays["prelu"] = np.full(E, config.prelu_init, dtype=dtype)
  arrays["W1"] = uniform(E, 4 * H)
  arrays["U1"] = uniform(H, 4 * H)
  arrays["b1"] = lstm_bias()
  arrays["W2"] = uniform(H, 4 * H)
  arrays["U2"] = uniform(H, 4 * H)
  arrays["b2"] = lstm_bias()
  arrays["w_out"] = uniform(H)
  arrays["b_out"] = np.zeros(1, dtype=dtype)
  return rnnparams(arrays)

def init_for_schema(schema, config):
  """ Parameters for a column schema, drawn over its complete universe. """
  position = dict((name, i) for i, name in enumerate(schema.universe))
  rows = [position[c.name] for c in schema.columns] + [len(schema.universe)]
  return init_params(len(schema.universe) + 1, config, rows)

def zero_state(params, slots):
  """ (h1, c1, h2, c2), each (slots, units) """
  H = params.units
  return tuple(np.zeros((slots, H), dtype=params.dtype) for k in range(4))

def _sigmoid(z):
  return 1.0 / (1.0 + np.exp(-z))

def _lstm_layer(inputs, W, U, b, h, c, keep):
  """ Runs one LSTM layer over (slots, steps, in). Returns outputs, final h, c, cache. """
  B, T = inputs.shape[0], inputs.shape[1]
  H = U.shape[0]
  pre = inputs @ W + b
  hs = np.empty((B, T, H), dtype=inputs.dtype)
  if keep:
    gates = np.empty((B, T, 4 * H), dtype=inputs.dtype)
    cs = np.empty((B, T, H), dtype=inputs.dtype)
    tanh_cs = np.empty((B, T, H), dtype=inputs.dtype)
  h0, c0 = h, c
  for t in range(T):
    a = pre[:, t] + h @ U
    i = _sigmoid(a[:, :H])
    f = _sigmoid(a[:, H:2 * H])
    o = _sigmoid(a[:, 2 * H:3 * H])
    g = np.tanh(a[:, 3 * H:])
    c = f * c + i * g
    tc = np.tanh(c)
    h = o * tc
    hs[:, t] = h
    if keep:
      gates[:, t, :H] = i
      gates[:, t, H:2 * H] = f
      gates[:, t, 2 * H:3 * H] = o
      gates[:, t, 3 * H:] = g
      cs[:, t] = c
      tanh_cs[:, t] = tc
  cache = (inputs, h0, c0, hs, gates, cs, tanh_cs) if keep else None
  return hs, h, c, cache

def _forward(params, X, state, keep):
  X = np.asarray(X, dtype=params.dtype)
  if X.ndim != 3 or X.shape[2] != params.input_width:
    raise ModelMismatchError("Batch has shape {}, model expects input width {}".format(
      X.shape, params.input_width))
  h1, c1, h2, c2 = state
  if h1.shape[0] != X.shape[0]:
    raise ModelMismatchError("State has {} slots, batch has {}".format(h1.shape[0], X.shape[0]))

  z_in = X @ params["W_in"] + params["b_in"]
  e = np.where(z_in > 0, z_in, params["prelu"] * z_in)
  hs1, h1, c1, cache1 = _lstm_layer(e, params["W1"], params["U1"], params["b1"], h1, c1, keep)
  hs2, h2, c2, cache2 = _lstm_layer(hs1, params["W2"], params["U2"], params["b2"], h2, c2, keep)
  p = _sigmoid(hs2 @ params["w_out"] + params["b_out"][0])
  cache = (X, z_in, cache1, cache2, p) if keep else None
  return p, (h1, c1, h2, c2), cache

def forward(params, batch, state):
  """
  Forward pass over a batch (slots, steps, input width) starting from
  'state'. Returns per step probabilities (slots, steps) and the state
  after the last step.
  """
  p, new_state, cache = _forward(params, batch, state, keep=False)
  return p, new_state

def loss(probabilities, labels, weights):
  """
  Weighted mean cross entropy over steps with positive weight. A batch
  without weight has loss 0.
  """
  w = np.asarray(weights, dtype=float)
  total = float(np.sum(w))
  if total <= 0:
    return 0.0
  p = np.clip(np.asarray(probabilities, dtype=float), LOSS_EPSILON, 1.0 - LOSS_EPSILON)
  y = np.asarray(labels, dtype=float)
  ce = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
  return float(np.sum(w * ce) / total)

def _lstm_backward(dhs, W, U, cache):
  inputs, h0, c0, hs, gates, cs, tanh_cs = cache
  B, T, H = hs.shape
  dA = np.empty((B, T, 4 * H), dtype=hs.dtype)
  dh_next = np.zeros((B, H), dtype=hs.dtype)
  dc_next = np.zeros((B, H), dtype=hs.dtype)
  for t in reversed(range(T)):
    i = gates[:, t, :H]
    f = gates[:, t, H:2 * H]
    o = gates[:, t, 2 * H:3 * H]
    g = gates[:, t, 3 * H:]
    c_prev = cs[:, t - 1] if t > 0 else c0
    tc = tanh_cs[:, t]
    dh = dhs[:, t] + dh_next
    do = dh * tc
    dc = dh * o * (1.0 - tc * tc) + dc_next
    dA[:, t, :H] = dc * g * i * (1.0 - i)
    dA[:, t, H:2 * H] = dc * c_prev * f * (1.0 - f)
    dA[:, t, 2 * H:3 * H] = do * o * (1.0 - o)
    dA[:, t, 3 * H:] = dc * i * (1.0 - g * g)
    dc_next = dc * f
    dh_next = dA[:, t] @ U.T

  flat = dA.reshape(B * T, 4 * H)
  h_prev = np.concatenate([h0[:, None, :], hs[:, :-1]], axis=1).reshape(B * T, H)
  dW = inputs.reshape(B * T, -1).T @ flat
  dU = h_prev.T @ flat
  db = flat.sum(axis=0)
  dinputs = dA @ W.T
  return dW, dU, db, dinputs

def _check_finite(name, value):
  if not np.all(np.isfinite(value)):
    bad = int(np.size(value) - np.count_nonzero(np.isfinite(value)))
    raise NumericError("{} non-finite values in {}".format(bad, name))

def backward(params, batch, state, labels, weights, clip_norm=None):
  """
  Exact gradients of loss() for one batch by back-propagation through
  time. The incoming state is a constant: gradients stop at the batch
  boundary. Returns (loss, gradients, new state). With clip_norm the
  gradients are rescaled to at most that global norm.
  """
  p, new_state, cache = _forward(params, batch, state, keep=True)
  X, z_in, cache1, cache2, _ = cache
  w = np.asarray(weights, dtype=params.dtype)
  y = np.asarray(labels, dtype=params.dtype)
  value = loss(p, y, w)
  _check_finite("loss", value)

  grads = params.zeros_like()
  total = float(np.sum(w))
  if total <= 0:
    return value, grads, new_state

  dz = w * (p - y) / total
  hs2 = cache2[3]
  B, T, H = hs2.shape
  grads["w_out"] = (hs2.reshape(B * T, H).T @ dz.reshape(B * T)).astype(params.dtype)
  grads["b_out"] = np.array([dz.sum()], dtype=params.dtype)
  dhs2 = dz[:, :, None] * params["w_out"]

  grads["W2"], grads["U2"], grads["b2"], dhs1 = _lstm_backward(dhs2, params["W2"], params["U2"], cache2)
  grads["W1"], grads["U1"], grads["b1"], de = _lstm_backward(dhs1, params["W1"], params["U1"], cache1)

  positive = z_in > 0
  dz_in = np.where(positive, de, de * params["prelu"])
  grads["prelu"] = np.where(positive, 0.0, de * z_in).reshape(-1, params.embed).sum(axis=0).astype(params.dtype)
  D = X.shape[2]
  grads["W_in"] = X.reshape(B * T, D).T @ dz_in.reshape(B * T, -1)
  grads["b_in"] = dz_in.reshape(B * T, -1).sum(axis=0)

  for name in PARAM_NAMES:
    _check_finite("gradient of " + name, grads[name])
  if clip_norm is not None:
    clip_gradients(grads, clip_norm)
  return value, grads, new_state

def global_norm(grads):
  return float(np.sqrt(sum(float(np.sum(np.square(grads[n], dtype=float))) for n in PARAM_NAMES)))

def clip_gradients(grads, clip_norm):
  """ Rescales gradients in place to global norm <= clip_norm. Returns the norm before. """
  norm = global_norm(grads)
  if norm > clip_norm:
    scale = clip_norm / norm
    for name in PARAM_NAMES:
      grads[name] = grads[name] * scale
  return norm

class adam:
  def __init__(self, params, learning_rate=0.001, beta1=0.9, beta2=0.999, epsilon=1e-8):
    self.learning_rate = learning_rate
    self.beta1 = beta1
    self.beta2 = beta2
    self.epsilon = epsilon
    self.m = params.zeros_like()
    self.v = params.zeros_like()
    self.steps = 0

  def step(self, params, grads):
    """ Updates params in place. """
    self.steps += 1
    correct1 = 1.0 - self.beta1 ** self.steps
    correct2 = 1.0 - self.beta2 ** self.steps
    for name in PARAM_NAMES:
      g = grads[name]
      self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
      self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
      update = self.learning_rate * (self.m[name] / correct1) / (np.sqrt(self.v[name] / correct2) + self.epsilon)
      params[name] = (params[name] - update).astype(params[name].dtype)

class earlystopping:
  """
  Tracks a validation metric where larger is better. The first epoch is
  always the best so far; afterwards only a strict improvement counts.
  Stops once 'patience' epochs in a row failed to improve.
  """
  def __init__(self, patience=5):
    self.patience = patience
    self.best_metric = None
    self.best_epoch = None
    self.waiting = 0

  def update(self, metric, epoch):
    """ Returns True when this epoch is the new best. """
    if self.best_epoch is None or (metric is not None and (self.best_metric is None or metric > self.best_metric)):
      self.best_metric = metric
      self.best_epoch = epoch
      self.waiting = 0
      return True
    self.waiting += 1
    return False

  @property
  def should_stop(self):
    return self.waiting >= self.patience

@dataclasses.dataclass(frozen=True)
class epochrecord:
  epoch: int
  train_loss: float
  metric: float
  seconds: float
  improved: bool

def train(buckets, schema, config=None, validation=None, params=None):
  """
  Trains over buckets from sequencing. Within a bucket the state is
  carried from batch to batch and reset at its first batch; buckets are
  visited in the same order every epoch. After each epoch 'validation'
  (a callable taking params and returning a metric, larger is better) is
  consulted for early stopping; without it the negated training loss is
  used. Returns the best params and the per epoch history. A non-finite
  loss or gradient aborts training with the best params seen so far.
  """
  config = config or rnnconfig()
  config.validate()
  log = logging.getLogger(__name__)
  if params is None:
    params = init_for_schema(schema, config)
  optimizer = adam(params, config.learning_rate, config.beta1, config.beta2, config.epsilon)
  stopper = earlystopping(config.patience)
  dense = [b.dense(schema, config.dtype) for b in buckets]
  best = params.copy()
  history = list()

  for epoch in range(1, config.max_epochs + 1):
    started = time.perf_counter()
    weighted_loss, weight_total = 0.0, 0.0
    try:
      for b, k, batch, carry in sequencing.iterate_for_training(buckets):
        X, y, w = dense[b]
        steps = slice(k * config.seq_len, (k + 1) * config.seq_len)
        if not carry:
          state = zero_state(params, X.shape[0])
        value, grads, state = backward(params, X[:, steps], state, y[:, steps], w[:, steps], config.clip_norm)
        batch_weight = float(np.sum(w[:, steps]))
        if batch_weight > 0:
          optimizer.step(params, grads)
          weighted_loss += value * batch_weight
          weight_total += batch_weight
      if not params.is_finite():
        raise NumericError("Parameters became non-finite in epoch {}".format(epoch))
    except NumericError as ne:
      log.error("Training diverged in epoch %d: %s. Keeping epoch %s parameters", epoch, ne, stopper.best_epoch)
      break

    train_loss = weighted_loss / weight_total if weight_total > 0 else 0.0
    metric = validation(params) if validation is not None else -train_loss
    improved = stopper.update(metric, epoch)
    if improved:
      best = params.copy()
    history.append(epochrecord(epoch, train_loss, metric, time.perf_counter() - started, improved))
    log.info("Epoch %d loss %.5f metric %s%s", epoch, train_loss, metric, " (best)" if improved else "")
    if stopper.should_stop:
      break

  return best, history

def predict_stream(params, state, sample):
  """
  Continual prediction for one user: feeds a single dense input row and
  returns its probability and the state for the next call. Pass None as
  state for a user's first sample.
  """
  x = np.asarray(sample, dtype=params.dtype).reshape(1, 1, -1)
  if state is None:
    state = zero_state(params, 1)
  p, new_state = forward(params, x, state)
  return float(p[0, 0]), new_state

def predict_streams(params, streams, chunk=256):
  """
  Replays many user streams at once, one slot per user, from zero state.
  'streams' maps user id to a dense (steps, input width) matrix; returns
  user id to per step probabilities.
  """
  users = list(streams)
  if not users:
    return dict()
  lengths = [len(streams[u]) for u in users]
  longest = max(lengths)
  X = np.zeros((len(users), longest, params.input_width), dtype=params.dtype)
  for k, u in enumerate(users):
    X[k, :lengths[k]] = streams[u]
  state = zero_state(params, len(users))
  out = np.empty((len(users), longest), dtype=float)
  for start in range(0, longest, chunk):
    p, state = forward(params, X[:, start:start + chunk], state)
    out[:, start:start + chunk] = p
  return dict((u, out[k, :lengths[k]]) for k, u in enumerate(users))

def write_model(params, path, config=None, schema_hash=None):
  """
  One JSON header line (config, schema hash, dtype, parameter shapes),
  then every parameter as raw little-endian values in header order.
  """
  dtype = params.dtype.newbyteorder("<")
  header = {
    "format": MODEL_FILE_MAGIC,
    "version": MODEL_FILE_VERSION,
    "config": configuration.as_dict(config) if config is not None else {},
    "schema_hash": schema_hash,
    "dtype": dtype.str,
    "params": [{"name": n, "shape": list(params[n].shape)} for n in PARAM_NAMES],
  }
  with open(path, "wb") as out:
    out.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
    for name in PARAM_NAMES:
      out.write(np.ascontiguousarray(params[name], dtype=dtype).tobytes())

def read_model(path, schema_hash=None):
  """ Returns (params, header). A given schema hash must match the file's. """
  with open(path, "rb") as infile:
    header = json.loads(infile.readline().decode("utf-8"))
    if header.get("format") != MODEL_FILE_MAGIC or header.get("version") != MODEL_FILE_VERSION:
      raise ValueError("{} is not a {} RNN model".format(path, MODEL_FILE_VERSION))
    if schema_hash is not None and header.get("schema_hash") != schema_hash:
      raise ModelMismatchError("{} was trained on schema {}, data has {}".format(
        path, header.get("schema_hash"), schema_hash))
    dtype = np.dtype(header["dtype"])
    arrays = dict()
    for entry in header["params"]:
      count = int(np.prod(entry["shape"])) if entry["shape"] else 1
      raw = infile.read(count * dtype.itemsize)
      arrays[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"]).astype(dtype.newbyteorder("="))
  return rnnparams(arrays), header
