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
import hashlib
import heapq
import json
import logging
import math

import numpy as np

from Notif_Attendance import configuration
from Notif_Attendance import sensorevents
from Notif_Attendance.sensorevents import SensorKind

SAMPLE_FILE_VERSION = "v1"
SAMPLE_FILE_MAGIC = "#notif-samples"

# Normalized present values land in [NORM_LOW, 1]. Zero stays the marker
# for "nothing reported".
NORM_LOW = 0.05
DT_CAP_MINUTES = 60.0
CAP_PERCENTILE = 95

class SchemaError(ValueError):
  """ Raised for an unusable sensor inventory. """

class ModelMismatchError(SchemaError):
  """ Raised when a file was written against a different column schema. """

class EncodingError(ValueError):
  """ Raised when events can not be mapped onto the column schema. """

class OrderingError(ValueError):
  """ Raised when samples or events are not in time order. """

@dataclasses.dataclass(frozen=True)
class column:
  kind: SensorKind
  measurement: str
  # One-hot state for categorical measurements, None for numeric ones.
  state: str = None

  @property
  def name(self):
    if self.state is None:
      return "{}.{}".format(self.kind.value, self.measurement)
    return "{}.{}={}".format(self.kind.value, self.measurement, self.state)

class columnschema:
  """
  Maps every (sensor, measurement, state) that can be reported onto one
  column of the sample matrix. The time delta, label and weight columns
  follow the sensor columns. Kinds removed for an ablation run are kept in
  'ablated' and their columns are gone, but 'universe' still lists the
  column names of the complete inventory.
  """
  def __init__(self, columns, ablated=(), universe=None):
    self.columns = tuple(columns)
    self.ablated = frozenset(ablated)
    self.universe = tuple(universe) if universe is not None else tuple(c.name for c in self.columns)
    self.kinds = frozenset(c.kind for c in self.columns)
    self._index = dict(((c.kind, c.measurement, c.state), i) for i, c in enumerate(self.columns))
    self._measurements = dict()
    for c in self.columns:
      self._measurements.setdefault(c.kind, list())
      if c.measurement not in self._measurements[c.kind]:
        self._measurements[c.kind].append(c.measurement)

  @property
  def width(self):
    """ Number of sensor value columns """
    return len(self.columns)

  @property
  def dt_index(self):
    return self.width

  @property
  def y_index(self):
    return self.width + 1

  @property
  def w_index(self):
    return self.width + 2

  @property
  def total_width(self):
    return self.width + 3

  @property
  def input_width(self):
    """ Columns the network sees: sensor values plus time delta. """
    return self.width + 1

  def names(self):
    return [c.name for c in self.columns] + ["dt", "y", "w"]

  @property
  def hash(self):
    digest = hashlib.sha256("\n".join(self.names()).encode("utf-8"))
    return digest.hexdigest()[:16]

  def lookup(self, kind, measurement, state=None):
    return self._index.get((kind, measurement, state))

  def columns_of(self, kind):
    return [i for i, c in enumerate(self.columns) if c.kind == kind]

  def __eq__(self, other):
    return isinstance(other, columnschema) and self.names() == other.names() and self.ablated == other.ablated

  def __hash__(self):
    return hash(self.hash)

def _inventory_items(inventory):
  if inventory is None:
    return list(sensorevents.PAYLOAD_SCHEMA.items())
  if hasattr(inventory, "items"):
    return list(inventory.items())
  return list(inventory)

def build_schema(inventory=None, ablate=()):
  """
  Builds the column schema for a sensor inventory, given as a mapping or a
  sequence of (SensorKind, measurements) pairs. Defaults to every sensor
  known to sensorevents. Categorical measurements are expanded one-hot and
  opaque ones get no column. TimeOfDay columns are added when the
  inventory does not list them.
  """
  items = _inventory_items(inventory)
  if not items:
    raise SchemaError("Sensor inventory is empty")

  seen = set()
  for kind, measurements in items:
    if kind in seen:
      raise SchemaError("Sensor {} listed twice".format(kind.value))
    seen.add(kind)
    names = [m.name for m in measurements]
    duplicates = sorted(set(n for n in names if names.count(n) > 1))
    if duplicates:
      raise SchemaError("Sensor {} has duplicate measurements {}".format(kind.value, ", ".join(duplicates)))
  if SensorKind.TIME_OF_DAY not in seen:
    items.append((SensorKind.TIME_OF_DAY, sensorevents.PAYLOAD_SCHEMA[SensorKind.TIME_OF_DAY]))

  ablate = frozenset(ablate)
  universe = list()
  kept = list()
  for kind, measurements in items:
    for m in measurements:
      if m.opaque:
        continue
      if m.states is None:
        cols = [column(kind, m.name)]
      else:
        cols = [column(kind, m.name, s) for s in m.states]
      universe.extend(c.name for c in cols)
      if kind not in ablate:
        kept.extend(cols)

  if not kept:
    raise SchemaError("Every sensor of the inventory is ablated")
  return columnschema(kept, ablated=ablate, universe=universe)

@dataclasses.dataclass(frozen=True)
class encodedsample:
  """
  One row of the sparse event matrix. 'x' maps column index to value and
  holds only the columns that were reported, so a reported 0 is still
  present. 't' is the time of the last constituent event and 't_first' of
  the first, both in seconds; 'dt' is in minutes.
  """
  x: dict = dataclasses.field(hash=False)
  y: int = None
  w: float = 0.0
  dt: float = 0.0
  t: float = 0.0
  t_first: float = 0.0
  category: str = None
  user_id: str = None
  merged: int = 1
  padding: bool = False

  @property
  def has_ground_truth(self):
    return self.y is not None

  @property
  def label(self):
    return self.y

def padding_sample(user_id=None):
  return encodedsample(x={}, padding=True, user_id=user_id, merged=0)

def _event_columns(event, schema):
  x = dict()
  for m in sensorevents.PAYLOAD_SCHEMA.get(event.kind, ()):
    if m.opaque or m.name not in event.payload:
      continue
    value = event.payload[m.name]
    if m.states is None:
      idx = schema.lookup(event.kind, m.name)
      if idx is not None:
        x[idx] = float(value)
    else:
      idx = schema.lookup(event.kind, m.name, value)
      if idx is None:
        raise EncodingError("{}.{} state {!r} has no column".format(event.kind.value, m.name, value))
      x[idx] = 1.0
  return x

def _timeline(trace, schema):
  """ Trace events merged with derived TimeOfDay ticks, ticks first on ties. """
  if SensorKind.TIME_OF_DAY not in schema.kinds:
    return iter(trace.events)
  ticks = ((e.timestamp, 0, i, e) for i, e in enumerate(sensorevents.time_of_day_ticks(trace)))
  events = ((e.timestamp, 1, i, e) for i, e in enumerate(trace.events))
  return (item[3] for item in heapq.merge(ticks, events))

def encode_events(trace, labels, schema):
  """
  Turns one sorted user trace into its sample stream, one sample per event.
  Notification posts carry the label of the matching entry of 'labels'
  (in posting order) with provisional weight 1. Events of ablated sensors
  are dropped, except notification posts which stay as samples without
  sensor values because they carry the ground truth.
  """
  bad = sensorevents.first_unsorted(trace.events)
  if bad is not None:
    raise OrderingError("Trace of user {} is not sorted at event {}".format(trace.user_id, bad))

  samples = list()
  pending = iter(labels)
  previous = None
  for event in _timeline(trace, schema):
    if event.is_notification_post():
      notification = next(pending, None)
      if notification is None or notification.post_time != event.timestamp:
        raise EncodingError("Labels of user {} do not match the notification at {}".format(
          trace.user_id, event.timestamp))
      x = dict() if event.kind in schema.ablated else _event_columns(event, schema)
      y, w, category = int(notification.label), 1.0, notification.category
    elif event.kind in schema.ablated:
      continue
    elif event.kind not in schema.kinds:
      raise EncodingError("Sensor {} is not part of the column schema".format(event.kind.value))
    else:
      x = _event_columns(event, schema)
      y, w, category = None, 0.0, None

    dt = 0.0 if previous is None else (event.timestamp - previous) / 60.0
    previous = event.timestamp
    samples.append(encodedsample(x=x, y=y, w=w, dt=dt, t=event.timestamp,
      t_first=event.timestamp, category=category, user_id=trace.user_id))

  if next(pending, None) is not None:
    raise EncodingError("User {} has more labels than notification posts".format(trace.user_id))
  return samples

@dataclasses.dataclass(frozen=True)
class compressionconfig:
  # Longest time, in minutes, a merged sample may span.
  T: float = 10.0

  def __post_init__(self):
    if not self.T > 0:
      raise configuration.ConfigError("Compression span T must be positive, got {}".format(self.T))

def clashes(open_x, next_x):
  """ True when some column holds different values in both samples. """
  for idx, value in next_x.items():
    if idx in open_x and open_x[idx] != value:
      return True
  return False

def can_merge(open_sample, next_sample, config):
  return (open_sample.y is None
    and next_sample.t - open_sample.t_first <= config.T * 60.0
    and not clashes(open_sample.x, next_sample.x))

def _merge(open_sample, next_sample):
  x = dict(open_sample.x)
  x.update(next_sample.x)
  return dataclasses.replace(next_sample,
    x=x,
    dt=open_sample.dt + (next_sample.t - open_sample.t) / 60.0,
    t_first=open_sample.t_first,
    merged=open_sample.merged + next_sample.merged)

def compress(samples, config=None):
  """
  Opportunistic lossless compression in a single greedy pass. The next
  sample joins the open one when no column clashes, the open sample holds
  no ground truth, and the merged span stays within T. A merged sample
  takes the label, weight and time of its last constituent, and its time
  delta reaches back to the last constituent of the sample before it.
  """
  config = config or compressionconfig()
  out = list()
  current = None
  for i, s in enumerate(samples):
    if current is not None and s.t < current.t:
      raise OrderingError("Sample {} at {} precedes {}".format(i, s.t, current.t))
    if current is not None and can_merge(current, s, config):
      current = _merge(current, s)
    else:
      if current is not None:
        out.append(current)
      current = s
  if current is not None:
    out.append(current)
  return out

def compression_ratio(before, after):
  """ Input samples per emitted sample. """
  if after == 0:
    return 1.0 if before == 0 else math.inf
  return before / float(after)

@dataclasses.dataclass(frozen=True)
class normalizationstats:
  """ Per column cap and range after capping, plus the same for dt. """
  cap: tuple
  lo: tuple
  hi: tuple
  dt_cap: float = DT_CAP_MINUTES
  dt_lo: float = 0.0
  dt_hi: float = DT_CAP_MINUTES

  @property
  def width(self):
    return len(self.cap)

def nearest_rank(values, percentile=CAP_PERCENTILE):
  """ Nearest-rank percentile: the smallest value with at least p% at or below it. """
  ordered = np.sort(np.asarray(values, dtype=float))
  if len(ordered) == 0:
    raise ValueError("Percentile of an empty set")
  rank = max(1, int(math.ceil(percentile / 100.0 * len(ordered))))
  return float(ordered[rank - 1])

def fit_normalization(samples, width):
  """
  Learns caps and ranges from training samples. Only present values count.
  Columns never present get identity stats (lo 0, hi 1). The time delta
  is capped at 60 minutes and scaled over its nonzero training values.
  """
  per_column = [list() for k in range(width)]
  deltas = list()
  count = 0
  for s in samples:
    if s.padding:
      continue
    count += 1
    for idx, value in s.x.items():
      per_column[idx].append(value)
    if s.dt > 0:
      deltas.append(min(s.dt, DT_CAP_MINUTES))
  if count == 0:
    raise ValueError("Normalization needs at least one training sample")

  cap, lo, hi = list(), list(), list()
  for values in per_column:
    if not values:
      cap.append(1.0)
      lo.append(0.0)
      hi.append(1.0)
      continue
    c = nearest_rank(values)
    capped = np.minimum(np.asarray(values, dtype=float), c)
    cap.append(c)
    lo.append(float(capped.min()))
    hi.append(float(capped.max()))

  if deltas:
    dt_lo, dt_hi = float(min(deltas)), float(max(deltas))
  else:
    dt_lo, dt_hi = 0.0, DT_CAP_MINUTES
  return normalizationstats(tuple(cap), tuple(lo), tuple(hi), DT_CAP_MINUTES, dt_lo, dt_hi)

def _scale(value, lo, hi, cap):
  if hi <= lo:
    return 1.0
  return NORM_LOW + (1.0 - NORM_LOW) * (min(max(value, lo), cap) - lo) / (hi - lo)

def _unscale(value, lo, hi):
  if hi <= lo:
    return lo
  return lo + (value - NORM_LOW) / (1.0 - NORM_LOW) * (hi - lo)

def apply_normalization(samples, stats):
  """ Present values map into [0.05, 1]; absent columns and zero dt stay 0. """
  out = list()
  for s in samples:
    if s.padding:
      out.append(s)
      continue
    x = dict((idx, _scale(v, stats.lo[idx], stats.hi[idx], stats.cap[idx])) for idx, v in s.x.items())
    dt = 0.0 if s.dt <= 0 else _scale(min(s.dt, stats.dt_cap), stats.dt_lo, stats.dt_hi, stats.dt_cap)
    out.append(dataclasses.replace(s, x=x, dt=dt))
  return out

def invert_normalization(samples, stats):
  """ Maps normalized samples back to capped raw values. """
  out = list()
  for s in samples:
    if s.padding:
      out.append(s)
      continue
    x = dict((idx, _unscale(v, stats.lo[idx], stats.hi[idx])) for idx, v in s.x.items())
    dt = 0.0 if s.dt <= 0 else _unscale(s.dt, stats.dt_lo, stats.dt_hi)
    out.append(dataclasses.replace(s, x=x, dt=dt))
  return out

def dense_matrix(samples, schema, dtype=np.float64):
  """
  Network view of a sample list: X holds the sensor columns followed by
  dt, y is 0 where no label exists and w is the loss weight.
  """
  n = len(samples)
  X = np.zeros((n, schema.input_width), dtype=dtype)
  y = np.zeros(n, dtype=dtype)
  w = np.zeros(n, dtype=dtype)
  for i, s in enumerate(samples):
    for idx, value in s.x.items():
      X[i, idx] = value
    X[i, schema.dt_index] = s.dt
    if s.y is not None:
      y[i] = s.y
      w[i] = s.w
  return X, y, w

def _fmt(value):
  return repr(float(value))

def write_samples(streams, path, schema):
  """
  Sample file: a header line with the schema hash, then per user an
  '@user' line followed by one line per sample holding y, w, dt, t,
  t_first, merged count, category and the sparse index:value pairs.
  """
  with open(path, "w") as out:
    out.write("{}\t{}\t{}\t{}\n".format(SAMPLE_FILE_MAGIC, SAMPLE_FILE_VERSION, schema.hash, schema.width))
    for user_id in streams:
      out.write("@user\t{}\n".format(user_id))
      for s in streams[user_id]:
        pairs = " ".join("{}:{}".format(idx, _fmt(s.x[idx])) for idx in sorted(s.x))
        out.write("\t".join([
          "-" if s.y is None else str(s.y), _fmt(s.w), _fmt(s.dt), _fmt(s.t), _fmt(s.t_first),
          str(s.merged), s.category or "-", pairs]) + "\n")

def read_samples(path, schema=None):
  """
  Reads a sample file into an ordered dict of user id to samples. When a
  schema is given its hash must match the file header.
  """
  streams = dict()
  with open(path, "r") as infile:
    header = infile.readline().rstrip("\n").split("\t")
    if len(header) != 4 or header[0] != SAMPLE_FILE_MAGIC or header[1] != SAMPLE_FILE_VERSION:
      raise EncodingError("{} is not a {} sample file".format(path, SAMPLE_FILE_VERSION))
    if schema is not None and header[2] != schema.hash:
      raise ModelMismatchError("{} was written for schema {}, data uses {}".format(path, header[2], schema.hash))

    user_id = None
    for lineno, line in enumerate(infile, start=2):
      line = line.rstrip("\n")
      if line.startswith("@user\t"):
        user_id = line.split("\t", 1)[1]
        streams[user_id] = list()
        continue
      if user_id is None:
        raise EncodingError("Line {} of {} precedes any @user line".format(lineno, path))
      fields = line.split("\t")
      if len(fields) != 8:
        raise EncodingError("Line {} of {} has {} fields".format(lineno, path, len(fields)))
      x = dict()
      if fields[7]:
        for pair in fields[7].split(" "):
          idx, value = pair.split(":")
          x[int(idx)] = float(value)
      streams[user_id].append(encodedsample(
        x=x,
        y=None if fields[0] == "-" else int(fields[0]),
        w=float(fields[1]), dt=float(fields[2]), t=float(fields[3]), t_first=float(fields[4]),
        merged=int(fields[5]), category=None if fields[6] == "-" else fields[6],
        user_id=user_id))

  logging.getLogger(__name__).debug("Read %d users from %s", len(streams), path)
  return header[2], streams

def write_normalization(stats, path, schema_hash, compression=None):
  """ Stats a trained network needs to encode new data the way it was trained """
  record = {
    "schema_hash": schema_hash,
    "compression_T": None if compression is None else compression.T,
    "cap": list(stats.cap), "lo": list(stats.lo), "hi": list(stats.hi),
    "dt_cap": stats.dt_cap, "dt_lo": stats.dt_lo, "dt_hi": stats.dt_hi,
  }
  with open(path, "w") as out:
    json.dump(record, out, sort_keys=True, indent=2)
    out.write("\n")

def read_normalization(path, schema_hash=None):
  """ Returns (stats, compressionconfig or None) """
  with open(path, "r") as infile:
    record = json.load(infile)
  if schema_hash is not None and record.get("schema_hash") != schema_hash:
    raise ModelMismatchError("{} was fitted on schema {}, data uses {}".format(
      path, record.get("schema_hash"), schema_hash))
  stats = normalizationstats(tuple(record["cap"]), tuple(record["lo"]), tuple(record["hi"]),
    record["dt_cap"], record["dt_lo"], record["dt_hi"])
  T = record.get("compression_T")
  return stats, None if T is None else compressionconfig(T)
