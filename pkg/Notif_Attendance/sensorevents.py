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
import bisect
import collections
import dataclasses
import datetime
import enum
import logging
import math

# Written as the first line of every event log. Bump when the layout changes.
EVENT_LOG_VERSION = "v1"
EVENT_LOG_HEADER = "#notif-events\t" + EVENT_LOG_VERSION
DEMOGRAPHICS_HEADER = "user_id\tage\tgender"

# Ground truth horizon: a notification is attended when its app is launched
# within this many seconds after it was posted.
DEFAULT_HORIZON = 600

class TraceError(ValueError):
  """ Raised when a user trace or event log is malformed. """

class SensorKind(enum.Enum):
  # Periodical
  ACCELEROMETER = "Accelerometer"
  BATTERY = "Battery"
  DATA = "Data"
  LIGHT = "Light"
  NOISE = "Noise"
  SEMANTIC_LOCATION = "SemanticLocation"
  # Event-driven
  APP = "App"
  AUDIO = "Audio"
  CHARGING_STATE = "ChargingState"
  NOTIFICATION = "Notification"
  NOTIFICATION_CENTER = "NotificationCenter"
  RINGER_MODE = "RingerMode"
  SCREEN = "Screen"
  SCREEN_ORIENTATION = "ScreenOrientation"
  # Derived from timestamps, never written to an event log.
  TIME_OF_DAY = "TimeOfDay"

PERIODICAL = frozenset([SensorKind.ACCELEROMETER, SensorKind.BATTERY,
  SensorKind.DATA, SensorKind.LIGHT, SensorKind.NOISE,
  SensorKind.SEMANTIC_LOCATION])

EVENT_DRIVEN = frozenset([SensorKind.APP, SensorKind.AUDIO,
  SensorKind.CHARGING_STATE, SensorKind.NOTIFICATION,
  SensorKind.NOTIFICATION_CENTER, SensorKind.RINGER_MODE, SensorKind.SCREEN,
  SensorKind.SCREEN_ORIENTATION])

DERIVED = frozenset([SensorKind.TIME_OF_DAY])

# Every channel that can be removed as a unit when measuring its importance.
ABLATION_UNITS = tuple(SensorKind)

def channel_class(kind):
  """ Returns 'periodical', 'event-driven' or 'derived' """
  if kind in PERIODICAL:
    return "periodical"
  if kind in EVENT_DRIVEN:
    return "event-driven"
  return "derived"

class AppCategory(enum.Enum):
  MESSAGING = "Messaging"
  EMAIL = "Email"
  PRODUCTIVITY = "Productivity"
  SOCIAL = "Social"
  ENTERTAINMENT = "Entertainment"
  GAMES = "Games"
  ALERT = "Alert"
  SYSTEM = "System"
  OTHER = "Other"

_SHARED_CATEGORIES = (AppCategory.MESSAGING, AppCategory.EMAIL,
  AppCategory.PRODUCTIVITY, AppCategory.SOCIAL, AppCategory.ENTERTAINMENT,
  AppCategory.GAMES, AppCategory.ALERT)
NOTIFICATION_CATEGORIES = _SHARED_CATEGORIES + (AppCategory.OTHER,)
LAUNCH_CATEGORIES = _SHARED_CATEGORIES + (AppCategory.SYSTEM,)

@dataclasses.dataclass(frozen=True)
class measurement:
  """
  One named value a sensor reports. Numeric measurements have no states.
  Categorical measurements list every state they may take. Opaque values
  (app identifiers) are carried along but never become model input.
  """
  name: str
  states: tuple = None
  opaque: bool = False

  @property
  def numeric(self):
    return self.states is None and not self.opaque

def _states(categories):
  return tuple(c.value for c in categories)

PAYLOAD_SCHEMA = {
  SensorKind.ACCELEROMETER: (measurement("mean"), measurement("max")),
  SensorKind.BATTERY: (measurement("drain"),),
  SensorKind.DATA: (measurement("rx_total"), measurement("tx_total"),
    measurement("rx_cell"), measurement("tx_cell")),
  SensorKind.LIGHT: (measurement("lux"),),
  SensorKind.NOISE: (measurement("db"),),
  SensorKind.SEMANTIC_LOCATION: (measurement("place", ("Home", "Work", "Out", "Unknown")),),
  SensorKind.APP: (measurement("app_id", opaque=True),
    measurement("category", _states(LAUNCH_CATEGORIES))),
  SensorKind.AUDIO: (measurement("state", ("Music", "NoMusic", "Speaker", "Headphones")),),
  SensorKind.CHARGING_STATE: (measurement("state", ("Charging", "NotCharging")),),
  SensorKind.NOTIFICATION: (measurement("action", ("Post", "Remove")),
    measurement("app_id", opaque=True),
    measurement("category", _states(NOTIFICATION_CATEGORIES))),
  SensorKind.NOTIFICATION_CENTER: (measurement("action", ("Open",)),),
  SensorKind.RINGER_MODE: (measurement("mode", ("Normal", "Silent", "Vibrate")),),
  SensorKind.SCREEN: (measurement("state", ("On", "Off", "Unlocked")),),
  SensorKind.SCREEN_ORIENTATION: (measurement("orientation", ("Portrait", "Landscape")),),
  SensorKind.TIME_OF_DAY: (measurement("hour"), measurement("weekday")),
}

@dataclasses.dataclass(frozen=True)
class sensorevent:
  """
  One timestamped reading or event of one user. Treated as immutable once
  built; the payload dictionary is never modified after construction.
  """
  user_id: str
  timestamp: float
  kind: SensorKind
  payload: dict = dataclasses.field(hash=False)

  def is_notification_post(self):
    return self.kind == SensorKind.NOTIFICATION and self.payload.get("action") == "Post"

  def is_app_launch(self):
    return self.kind == SensorKind.APP

@dataclasses.dataclass(frozen=True)
class usertrace:
  user_id: str
  age: int
  gender: str
  events: tuple

  @property
  def start_time(self):
    return self.events[0].timestamp if self.events else 0.0

  @property
  def end_time(self):
    return self.events[-1].timestamp if self.events else 0.0

  def is_sorted(self):
    return first_unsorted(self.events) is None

@dataclasses.dataclass(frozen=True)
class labelednotification:
  user_id: str
  post_time: float
  app_id: str
  category: str
  label: int
  # Posted within one horizon of the end of the trace, so an attending
  # launch may simply not have been recorded.
  truncated: bool = False

def first_unsorted(events):
  """ Index of the first event older than its predecessor, or None """
  for i in range(1, len(events)):
    if events[i].timestamp < events[i-1].timestamp:
      return i
  return None

def hour_of_day(timestamp):
  """ Hour 0-23. Traces carry local time expressed as seconds since epoch. """
  return int(timestamp // 3600) % 24

def day_of_week(timestamp):
  """ ISO weekday, Monday is 1 """
  return datetime.datetime.fromtimestamp(timestamp, tz=datetime.timezone.utc).isoweekday()

def calendar_date(timestamp):
  return datetime.datetime.fromtimestamp(timestamp, tz=datetime.timezone.utc).date()

def label_notifications(trace, horizon=DEFAULT_HORIZON):
  """
  Labels every notification post event of the trace. A notification counts
  as attended when an App launch with the same app_id follows it within
  the horizon: post_time < t <= post_time + horizon.
  """
  if horizon <= 0:
    raise ValueError("Labeling horizon {} must be positive".format(horizon))

  bad = first_unsorted(trace.events)
  if bad is not None:
    raise TraceError("Trace of user {} is not sorted: event {} at {} follows {}".format(
      trace.user_id, bad, trace.events[bad].timestamp, trace.events[bad-1].timestamp))

  # Launch times per app, already in time order because the trace is.
  launches = collections.defaultdict(list)
  for event in trace.events:
    if event.is_app_launch():
      launches[event.payload.get("app_id")].append(event.timestamp)

  end = trace.end_time
  labels = list()
  for event in trace.events:
    if not event.is_notification_post():
      continue
    app_id = event.payload.get("app_id")
    times = launches.get(app_id, ())
    nxt = bisect.bisect_right(times, event.timestamp)
    attended = nxt < len(times) and times[nxt] <= event.timestamp + horizon
    labels.append(labelednotification(
      user_id=trace.user_id,
      post_time=event.timestamp,
      app_id=app_id,
      category=event.payload.get("category", AppCategory.OTHER.value),
      label=1 if attended else 0,
      truncated=event.timestamp + horizon > end))

  return labels

@dataclasses.dataclass(frozen=True)
class violation:
  index: int
  category: str
  message: str

class validationreport:
  """
  Findings of validate_trace. Categories are 'ordering', 'unknown-key',
  'non-finite', 'bad-value' and 'user-mismatch'.
  """
  def __init__(self, user_id):
    self.user_id = user_id
    self.violations = list()

  def add(self, index, category, message):
    self.violations.append(violation(index, category, message))

  def count(self, category):
    return sum(1 for v in self.violations if v.category == category)

  def is_empty(self):
    return len(self.violations) == 0

  def __len__(self):
    return len(self.violations)

def validate_trace(trace):
  """
  Checks a trace without raising. Returns a validationreport listing
  ordering problems, payload keys outside the sensor's schema, non-finite
  numbers and categorical values outside the known states.
  """
  report = validationreport(trace.user_id)

  for i, event in enumerate(trace.events):
    if i > 0 and event.timestamp < trace.events[i-1].timestamp:
      report.add(i, "ordering", "timestamp {} precedes {}".format(
        event.timestamp, trace.events[i-1].timestamp))

    if event.user_id != trace.user_id:
      report.add(i, "user-mismatch", "event of user {} in trace of {}".format(
        event.user_id, trace.user_id))

    if not isinstance(event.timestamp, (int, float)) or not math.isfinite(event.timestamp):
      report.add(i, "non-finite", "timestamp {}".format(event.timestamp))

    known = dict((m.name, m) for m in PAYLOAD_SCHEMA.get(event.kind, ()))
    for key, value in event.payload.items():
      m = known.get(key)
      if m is None:
        report.add(i, "unknown-key", "{} has no measurement '{}'".format(event.kind.value, key))
      elif m.numeric:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
          report.add(i, "bad-value", "{}.{} is not numeric: {!r}".format(event.kind.value, key, value))
        elif not math.isfinite(value):
          report.add(i, "non-finite", "{}.{} = {}".format(event.kind.value, key, value))
      elif m.states is not None and value not in m.states:
        report.add(i, "bad-value", "{}.{} has unknown state {!r}".format(event.kind.value, key, value))

  return report

def time_of_day_ticks(trace):
  """
  Derived TimeOfDay events: one at the first event of the trace and one on
  every full hour up to the last event. Payload hour is 1-24 and weekday
  1-7 so that neither is ever zero, which downstream means "absent".
  """
  if not trace.events:
    return []

  def tick(t):
    return sensorevent(trace.user_id, t, SensorKind.TIME_OF_DAY,
      {"hour": float(hour_of_day(t) + 1), "weekday": float(day_of_week(t))})

  ticks = [tick(trace.start_time)]
  boundary = (math.floor(trace.start_time / 3600.0) + 1) * 3600.0
  while boundary <= trace.end_time:
    ticks.append(tick(boundary))
    boundary += 3600.0
  return ticks

def _format_value(value):
  if isinstance(value, str):
    return value
  return repr(float(value))

def write_event_log(traces, events_path, demographics_path):
  """
  Writes traces in the line oriented event log format: a version header,
  then one event per line as user_id, timestamp, sensor kind and key=value
  pairs, all tab separated. Demographics go to a companion file.
  """
  with open(events_path, "w") as out:
    out.write(EVENT_LOG_HEADER + "\n")
    for trace in traces:
      for event in trace.events:
        fields = [event.user_id, repr(float(event.timestamp)), event.kind.value]
        for key in sorted(event.payload):
          fields.append("{}={}".format(key, _format_value(event.payload[key])))
        out.write("\t".join(fields) + "\n")

  with open(demographics_path, "w") as out:
    out.write(DEMOGRAPHICS_HEADER + "\n")
    for trace in traces:
      out.write("{}\t{}\t{}\n".format(trace.user_id, trace.age, trace.gender))

def _parse_payload(kind, pairs, lineno):
  known = dict((m.name, m) for m in PAYLOAD_SCHEMA.get(kind, ()))
  payload = dict()
  for pair in pairs:
    if "=" not in pair:
      raise TraceError("Line {}: payload entry '{}' is not key=value".format(lineno, pair))
    key, value = pair.split("=", 1)
    m = known.get(key)
    if m is not None and m.numeric:
      try:
        payload[key] = float(value)
      except ValueError:
        raise TraceError("Line {}: {}.{} value '{}' is not a number".format(lineno, kind.value, key, value))
    else:
      payload[key] = value
  return payload

def read_event_log(events_path, demographics_path):
  """
  Reads an event log and its demographics file back into traces, in the
  order users appear in the demographics file. Event order is kept as it
  is in the file; validate_trace reports any ordering problem.
  """
  demographics = collections.OrderedDict()
  with open(demographics_path, "r") as infile:
    header = infile.readline().rstrip("\n")
    if header != DEMOGRAPHICS_HEADER:
      raise TraceError("{} does not start with '{}'".format(demographics_path, DEMOGRAPHICS_HEADER))
    for line in infile:
      if not line.strip():
        continue
      user_id, age, gender = line.rstrip("\n").split("\t")
      demographics[user_id] = (int(age), gender)

  events = collections.defaultdict(list)
  with open(events_path, "r") as infile:
    header = infile.readline().rstrip("\n")
    if header != EVENT_LOG_HEADER:
      raise TraceError("{} has header '{}', expected '{}'".format(events_path, header, EVENT_LOG_HEADER))
    for lineno, line in enumerate(infile, start=2):
      if not line.strip():
        continue
      fields = line.rstrip("\n").split("\t")
      if len(fields) < 3:
        raise TraceError("Line {} of {} has too few fields".format(lineno, events_path))
      try:
        kind = SensorKind(fields[2])
      except ValueError:
        raise TraceError("Line {}: unknown sensor kind '{}'".format(lineno, fields[2]))
      events[fields[0]].append(sensorevent(fields[0], float(fields[1]), kind,
        _parse_payload(kind, fields[3:], lineno)))

  for user_id in events:
    if user_id not in demographics:
      logging.getLogger(__name__).warning("User %s has events but no demographics", user_id)
      demographics[user_id] = (0, "unknown")

  return [usertrace(user_id, age, gender, tuple(events.get(user_id, ())))
    for user_id, (age, gender) in demographics.items()]

LABEL_FILE_HEADER = "user_id\tpost_time\tapp_id\tcategory\tlabel\ttruncated"

def write_labels(labels_by_user, path):
  with open(path, "w") as out:
    out.write(LABEL_FILE_HEADER + "\n")
    for user_id in labels_by_user:
      for n in labels_by_user[user_id]:
        out.write("{}\t{}\t{}\t{}\t{}\t{}\n".format(n.user_id, repr(float(n.post_time)), n.app_id,
          n.category, n.label, int(n.truncated)))

def read_labels(path):
  """ Labeled notifications grouped by user, in file order """
  labels = collections.OrderedDict()
  with open(path, "r") as infile:
    if infile.readline().rstrip("\n") != LABEL_FILE_HEADER:
      raise TraceError("{} is not a label file".format(path))
    for lineno, line in enumerate(infile, start=2):
      fields = line.rstrip("\n").split("\t")
      if len(fields) != 6:
        raise TraceError("Line {} of {} has {} fields".format(lineno, path, len(fields)))
      n = labelednotification(fields[0], float(fields[1]), fields[2], fields[3], int(fields[4]), fields[5] == "1")
      labels.setdefault(n.user_id, list()).append(n)
  return labels
