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
import hashlib
import logging
import math

import numpy as np

from Notif_Attendance import sensorevents
from Notif_Attendance.sensorevents import SensorKind

FEATURE_FILE_MAGIC = "#notif-features"
FEATURE_FILE_VERSION = "v1"

# Time-since features saturate at one day.
TIME_SINCE_CAP = 86400.0

COMMUNICATION = "Communication Activity"
CONTEXT = "Context"
DEMOGRAPHIC = "Demographic"
PHONE_STATUS = "Phone Status"
USAGE = "Usage Patterns"
GROUPS = (COMMUNICATION, CONTEXT, DEMOGRAPHIC, PHONE_STATUS, USAGE)

PREFIX = {
  SensorKind.ACCELEROMETER: "accelerometer",
  SensorKind.BATTERY: "battery",
  SensorKind.DATA: "data",
  SensorKind.LIGHT: "light",
  SensorKind.NOISE: "noise",
  SensorKind.SEMANTIC_LOCATION: "location",
  SensorKind.APP: "app",
  SensorKind.AUDIO: "audio",
  SensorKind.CHARGING_STATE: "charging",
  SensorKind.NOTIFICATION: "notification",
  SensorKind.NOTIFICATION_CENTER: "notification_center",
  SensorKind.RINGER_MODE: "ringer",
  SensorKind.SCREEN: "screen",
  SensorKind.SCREEN_ORIENTATION: "orientation",
  SensorKind.TIME_OF_DAY: "time",
}

GROUP_OF = {
  SensorKind.ACCELEROMETER: CONTEXT,
  SensorKind.BATTERY: PHONE_STATUS,
  SensorKind.DATA: PHONE_STATUS,
  SensorKind.LIGHT: CONTEXT,
  SensorKind.NOISE: CONTEXT,
  SensorKind.SEMANTIC_LOCATION: CONTEXT,
  SensorKind.APP: USAGE,
  SensorKind.AUDIO: CONTEXT,
  SensorKind.CHARGING_STATE: PHONE_STATUS,
  SensorKind.NOTIFICATION: COMMUNICATION,
  SensorKind.NOTIFICATION_CENTER: COMMUNICATION,
  SensorKind.RINGER_MODE: PHONE_STATUS,
  SensorKind.SCREEN: USAGE,
  SensorKind.SCREEN_ORIENTATION: PHONE_STATUS,
  SensorKind.TIME_OF_DAY: CONTEXT,
}

# Continuous sensors get robust statistics; these never report categories.
CONTINUOUS = (SensorKind.ACCELEROMETER, SensorKind.BATTERY, SensorKind.DATA,
  SensorKind.LIGHT, SensorKind.NOISE)

# Measurements summarized by quartiles and MAD in every window. The rest
# (peak acceleration, cellular share of traffic) only report their last value.
SUMMARIZED = {
  SensorKind.ACCELEROMETER: ("mean",),
  SensorKind.BATTERY: ("drain",),
  SensorKind.DATA: ("rx_total", "tx_total"),
  SensorKind.LIGHT: ("lux",),
  SensorKind.NOISE: ("db",),
}

# Event sensors counted per window, with the state whose events are counted
# (None counts every event of the sensor).
COUNTED = (
  (SensorKind.SCREEN, "state", "Unlocked", "unlock_count"),
  (SensorKind.AUDIO, None, None, "event_count"),
  (SensorKind.CHARGING_STATE, None, None, "event_count"),
  (SensorKind.NOTIFICATION_CENTER, None, None, "open_count"),
  (SensorKind.RINGER_MODE, None, None, "event_count"),
  (SensorKind.SCREEN_ORIENTATION, None, None, "event_count"),
)

# Event sensors whose most recent state is a one-hot feature.
LAST_STATE = (SensorKind.AUDIO, SensorKind.CHARGING_STATE,
  SensorKind.RINGER_MODE, SensorKind.SCREEN, SensorKind.SCREEN_ORIENTATION)

PLACES = ("Home", "Work", "Out", "Unknown")

@dataclasses.dataclass(frozen=True)
class windowspec:
  moment_s: float = 300.0
  recent_s: float = 3600.0
  day_start_hour: int = 5
  # ISO dates (YYYY-MM-DD) that are not working days besides weekends.
  holidays: tuple = ()

  @property
  def moment(self):
    return "{}min".format(int(self.moment_s // 60))

  @property
  def recent(self):
    return "{}min".format(int(self.recent_s // 60))

  def labels(self):
    return (self.moment, self.recent, "day")

  def day_start(self, post_time):
    offset = self.day_start_hour * 3600.0
    return math.floor((post_time - offset) / 86400.0) * 86400.0 + offset

  def starts(self, post_time):
    """ Window label to first included second; every window ends before post_time. """
    return {
      self.moment: post_time - self.moment_s,
      self.recent: post_time - self.recent_s,
      "day": self.day_start(post_time),
    }

  def is_working_day(self, timestamp):
    if sensorevents.day_of_week(timestamp) > 5:
      return False
    return sensorevents.calendar_date(timestamp).isoformat() not in self.holidays

@dataclasses.dataclass(frozen=True)
class featurespec:
  name: str
  group: str
  # Sensor the feature is derived from, None for demographics.
  sensor: SensorKind = None

def _state_slug(state):
  return state.lower()

def _numeric_measurements(kind):
  return [m.name for m in sensorevents.PAYLOAD_SCHEMA[kind] if m.numeric]

def full_manifest(windows=None):
  """ Every feature for the complete sensor inventory, in fixed order. """
  windows = windows or windowspec()
  specs = list()

  def add(name, kind):
    specs.append(featurespec(name, GROUP_OF[kind], kind))

  for kind in CONTINUOUS:
    prefix = PREFIX[kind]
    for m in SUMMARIZED[kind]:
      for label in windows.labels():
        for stat in ("q1", "median", "q3", "mad"):
          add("{}_{}_{}_{}".format(prefix, m, stat, label), kind)
    for label in windows.labels():
      add("{}_present_{}".format(prefix, label), kind)
  for kind in CONTINUOUS:
    for m in _numeric_measurements(kind):
      add("{}_{}_last".format(PREFIX[kind], m), kind)

  loc = SensorKind.SEMANTIC_LOCATION
  for place in PLACES:
    add("location_current_{}".format(_state_slug(place)), loc)
  add("location_present", loc)
  for place in PLACES:
    add("location_fraction_{}".format(_state_slug(place)), loc)
  add("location_distinct_today", loc)

  app = SensorKind.APP
  add("app_seconds_since_launch", app)
  add("app_launch_present", app)
  for label in windows.labels():
    add("app_launch_count_{}".format(label), app)
  for c in sensorevents.LAUNCH_CATEGORIES:
    add("app_last_category_{}".format(_state_slug(c.value)), app)

  notif = SensorKind.NOTIFICATION
  add("notification_seconds_since_last", notif)
  add("notification_present", notif)
  for label in windows.labels():
    add("notification_count_{}".format(label), notif)
  for c in sensorevents.NOTIFICATION_CATEGORIES:
    add("notification_last_category_{}".format(_state_slug(c.value)), notif)

  for kind, key, state, stem in COUNTED:
    for label in windows.labels():
      add("{}_{}_{}".format(PREFIX[kind], stem, label), kind)

  for kind in LAST_STATE:
    for state in sensorevents.PAYLOAD_SCHEMA[kind][0].states:
      add("{}_last_{}".format(PREFIX[kind], _state_slug(state)), kind)

  specs.append(featurespec("age", DEMOGRAPHIC))
  specs.append(featurespec("gender_female", DEMOGRAPHIC))

  tod = SensorKind.TIME_OF_DAY
  add("hour_of_day", tod)
  add("day_of_week", tod)
  add("working_day", tod)
  return specs

def feature_manifest(schema=None, windows=None):
  """
  Ordered feature list for a column schema. Features of sensors the schema
  ablates are left out; demographics are always kept.
  """
  ablated = schema.ablated if schema is not None else frozenset()
  return [f for f in full_manifest(windows) if f.sensor not in ablated]

def manifest_hash(manifest):
  digest = hashlib.sha256("\n".join(f.name for f in manifest).encode("utf-8"))
  return digest.hexdigest()[:16]

class traceindex:
  """
  Per sensor sorted time arrays of one trace, so every window query is a
  pair of binary searches.
  """
  def __init__(self, trace):
    self.user_id = trace.user_id
    self.age = trace.age
    self.gender = trace.gender

    numeric = collections.defaultdict(lambda: ([], []))
    states = collections.defaultdict(lambda: ([], []))
    kind_times = collections.defaultdict(list)
    launches = ([], [])
    posts = ([], [])

    for event in trace.events:
      kind = event.kind
      if kind in CONTINUOUS:
        for m in _numeric_measurements(kind):
          if m in event.payload:
            numeric[(kind, m)][0].append(event.timestamp)
            numeric[(kind, m)][1].append(float(event.payload[m]))
      elif kind == SensorKind.APP:
        launches[0].append(event.timestamp)
        launches[1].append(event.payload.get("category"))
      elif kind == SensorKind.NOTIFICATION:
        if event.is_notification_post():
          posts[0].append(event.timestamp)
          posts[1].append(event.payload.get("category"))
      else:
        kind_times[kind].append(event.timestamp)
        m = sensorevents.PAYLOAD_SCHEMA[kind][0]
        if m.states is not None and m.name in event.payload:
          states[kind][0].append(event.timestamp)
          states[kind][1].append(event.payload[m.name])

    self.numeric = dict((key, (np.asarray(t, dtype=float), np.asarray(v, dtype=float)))
      for key, (t, v) in numeric.items())
    self.states = dict((kind, (np.asarray(t, dtype=float), list(v))) for kind, (t, v) in states.items())
    self.kind_times = dict((kind, np.asarray(t, dtype=float)) for kind, t in kind_times.items())
    self.state_times = dict()
    for kind, (t, v) in self.states.items():
      for state in set(v):
        mask = np.array([s == state for s in v], dtype=bool)
        self.state_times[(kind, state)] = t[mask]
    self.launch_times = np.asarray(launches[0], dtype=float)
    self.launch_categories = launches[1]
    self.post_times = np.asarray(posts[0], dtype=float)
    self.post_categories = posts[1]

def _span(times, start, end):
  """ Index range of sorted times in [start, end) """
  return (int(np.searchsorted(times, start, side="left")),
    int(np.searchsorted(times, end, side="left")))

def _count(times, start, end):
  if times is None or len(times) == 0:
    return 0
  i0, i1 = _span(times, start, end)
  return i1 - i0

def robust_stats(values):
  """ Q1, median, Q3 (linear interpolation) and unscaled MAD """
  values = np.asarray(values, dtype=float)
  q1, median, q3 = np.percentile(values, [25, 50, 75])
  mad = np.median(np.abs(values - median))
  return float(q1), float(median), float(q3), float(mad)

def _one_hot(prefix, states, current):
  return dict(("{}_{}".format(prefix, _state_slug(s)), 1.0 if s == current else 0.0) for s in states)

def _extract_all(index, post, windows):
  values = dict()
  starts = windows.starts(post)
  day_start = starts["day"]

  for kind in CONTINUOUS:
    prefix = PREFIX[kind]
    present = dict((label, 0.0) for label in windows.labels())
    for m in _numeric_measurements(kind):
      times, readings = index.numeric.get((kind, m), (np.zeros(0), np.zeros(0)))
      for label in windows.labels():
        i0, i1 = _span(times, starts[label], post)
        if i1 > i0:
          present[label] = 1.0
        if m not in SUMMARIZED[kind]:
          continue
        stats = robust_stats(readings[i0:i1]) if i1 > i0 else (0.0, 0.0, 0.0, 0.0)
        for name, v in zip(("q1", "median", "q3", "mad"), stats):
          values["{}_{}_{}_{}".format(prefix, m, name, label)] = v
      i0, i1 = _span(times, day_start, post)
      values["{}_{}_last".format(prefix, m)] = float(readings[i1 - 1]) if i1 > i0 else 0.0
    for label in present:
      values["{}_present_{}".format(prefix, label)] = present[label]

  times, places = index.states.get(SensorKind.SEMANTIC_LOCATION, (np.zeros(0), []))
  i0, i1 = _span(times, day_start, post)
  today = places[i0:i1]
  values.update(_one_hot("location_current", PLACES, today[-1] if today else None))
  values["location_present"] = 1.0 if today else 0.0
  for place in PLACES:
    values["location_fraction_{}".format(_state_slug(place))] = today.count(place) / float(len(today)) if today else 0.0
  values["location_distinct_today"] = float(len(set(today)))

  for prefix, times, categories, catalog, stem in (
      ("app", index.launch_times, index.launch_categories, sensorevents.LAUNCH_CATEGORIES, "launch"),
      ("notification", index.post_times, index.post_categories, sensorevents.NOTIFICATION_CATEGORIES, None)):
    last = int(np.searchsorted(times, post, side="left")) - 1
    since = "app_seconds_since_launch" if stem else "notification_seconds_since_last"
    flag = "app_launch_present" if stem else "notification_present"
    count = "app_launch_count_{}" if stem else "notification_count_{}"
    if last >= 0:
      values[since] = min(post - times[last], TIME_SINCE_CAP)
      values[flag] = 1.0
      current = categories[last]
    else:
      values[since] = TIME_SINCE_CAP
      values[flag] = 0.0
      current = None
    for label in windows.labels():
      values[count.format(label)] = float(_count(times, starts[label], post))
    values.update(_one_hot("{}_last_category".format(prefix), [c.value for c in catalog], current))

  for kind, key, state, stem in COUNTED:
    times = index.kind_times.get(kind) if state is None else index.state_times.get((kind, state))
    for label in windows.labels():
      values["{}_{}_{}".format(PREFIX[kind], stem, label)] = float(_count(times, starts[label], post))

  for kind in LAST_STATE:
    times, seen = index.states.get(kind, (np.zeros(0), []))
    last = int(np.searchsorted(times, post, side="left")) - 1
    current = seen[last] if last >= 0 else None
    values.update(_one_hot("{}_last".format(PREFIX[kind]), sensorevents.PAYLOAD_SCHEMA[kind][0].states, current))

  values["age"] = float(index.age)
  values["gender_female"] = 1.0 if index.gender == "female" else 0.0
  values["hour_of_day"] = float(sensorevents.hour_of_day(post))
  values["day_of_week"] = float(sensorevents.day_of_week(post))
  values["working_day"] = 1.0 if windows.is_working_day(post) else 0.0
  return values

def extract_features(index, notification, windows=None, manifest=None):
  """
  Feature vector of one notification, in manifest order. Only events
  strictly before the posting time are looked at. 'index' may be a
  traceindex or a plain usertrace.
  """
  if not isinstance(index, traceindex):
    index = traceindex(index)
  if notification.user_id != index.user_id:
    raise ValueError("Notification of user {} used with trace of {}".format(notification.user_id, index.user_id))
  windows = windows or windowspec()
  manifest = manifest if manifest is not None else full_manifest(windows)
  values = _extract_all(index, notification.post_time, windows)
  return np.array([values[f.name] for f in manifest], dtype=float)

class featurematrix:
  """
  Feature rows of many labeled notifications together with the columns
  weighting and evaluation need: user, category, post time, label and the
  truncation flag.
  """
  def __init__(self, manifest, X, labels, users, categories, post_times, truncated=None):
    self.manifest = list(manifest)
    self.X = np.asarray(X, dtype=float).reshape(len(labels), len(self.manifest))
    self.labels = np.asarray(labels, dtype=int)
    self.users = list(users)
    self.categories = list(categories)
    self.post_times = np.asarray(post_times, dtype=float)
    self.truncated = np.zeros(len(labels), dtype=bool) if truncated is None else np.asarray(truncated, dtype=bool)

  def __len__(self):
    return len(self.labels)

  @property
  def names(self):
    return [f.name for f in self.manifest]

  def instances(self):
    """ Lightweight labeled records for weighting and evaluation """
    return [sensorevents.labelednotification(u, t, None, c, int(y), bool(tr))
      for u, t, c, y, tr in zip(self.users, self.post_times, self.categories, self.labels, self.truncated)]

  def subset(self, mask):
    mask = np.asarray(mask, dtype=bool)
    keep = np.flatnonzero(mask)
    return featurematrix(self.manifest, self.X[keep], self.labels[keep],
      [self.users[i] for i in keep], [self.categories[i] for i in keep],
      self.post_times[keep], self.truncated[keep])

def build_feature_matrix(traces, labels_by_user, windows=None, schema=None):
  """ Extracts features for every labeled notification of every trace. """
  windows = windows or windowspec()
  manifest = feature_manifest(schema, windows)
  rows, labels, users, categories, times, truncated = [], [], [], [], [], []
  for trace in traces:
    index = traceindex(trace)
    for n in labels_by_user.get(trace.user_id, ()):
      rows.append(extract_features(index, n, windows, manifest))
      labels.append(n.label)
      users.append(n.user_id)
      categories.append(n.category)
      times.append(n.post_time)
      truncated.append(n.truncated)
  logging.getLogger(__name__).info("Extracted %d features for %d notifications", len(manifest), len(rows))
  X = np.vstack(rows) if rows else np.zeros((0, len(manifest)))
  return featurematrix(manifest, X, labels, users, categories, times, truncated)

def write_feature_matrix(matrix, path):
  """
  Tab separated: a version line with the manifest hash, a group line, the
  header row (manifest names after the bookkeeping columns), one row per
  notification.
  """
  with open(path, "w") as out:
    out.write("{}\t{}\t{}\n".format(FEATURE_FILE_MAGIC, FEATURE_FILE_VERSION, manifest_hash(matrix.manifest)))
    out.write("\t".join(["#group", "", "", "", ""] + [f.group for f in matrix.manifest]) + "\n")
    out.write("\t".join(["user_id", "category", "post_time", "label", "truncated"] + matrix.names) + "\n")
    for i in range(len(matrix)):
      fields = [matrix.users[i], matrix.categories[i], repr(float(matrix.post_times[i])),
        str(int(matrix.labels[i])), str(int(matrix.truncated[i]))]
      fields.extend(repr(float(v)) for v in matrix.X[i])
      out.write("\t".join(fields) + "\n")

def read_feature_matrix(path):
  with open(path, "r") as infile:
    version = infile.readline().rstrip("\n").split("\t")
    if len(version) != 3 or version[0] != FEATURE_FILE_MAGIC or version[1] != FEATURE_FILE_VERSION:
      raise ValueError("{} is not a {} feature file".format(path, FEATURE_FILE_VERSION))
    groups = infile.readline().rstrip("\n").split("\t")[5:]
    names = infile.readline().rstrip("\n").split("\t")[5:]
    if len(groups) != len(names):
      raise ValueError("{} has {} groups for {} features".format(path, len(groups), len(names)))
    sensor_of = dict((f.name, f.sensor) for f in full_manifest())
    manifest = [featurespec(n, g, sensor_of.get(n)) for n, g in zip(names, groups)]
    if manifest_hash(manifest) != version[2]:
      raise ValueError("{} manifest does not match its hash".format(path))

    users, categories, times, labels, truncated, rows = [], [], [], [], [], []
    for line in infile:
      if not line.strip():
        continue
      fields = line.rstrip("\n").split("\t")
      users.append(fields[0])
      categories.append(fields[1])
      times.append(float(fields[2]))
      labels.append(int(fields[3]))
      truncated.append(fields[4] == "1")
      rows.append([float(v) for v in fields[5:]])
  X = np.array(rows, dtype=float) if rows else np.zeros((0, len(manifest)))
  return featurematrix(manifest, X, labels, users, categories, times, truncated)
