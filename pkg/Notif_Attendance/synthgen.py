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
import json
import logging
import math
import os

import numpy as np

from Notif_Attendance import configuration
from Notif_Attendance import sensorevents
from Notif_Attendance.sensorevents import SensorKind, AppCategory, sensorevent

SECONDS_PER_DAY = 86400.0

def _category_rates():
  # Mean notifications per user and day.
  return {"Messaging": 35.7, "Email": 17.7, "Productivity": 9.4,
    "Social": 10.0, "Entertainment": 5.1, "Games": 7.2, "Alert": 3.0,
    "Other": 0.0}

def _category_positives():
  # Fraction of notifications followed by a launch of their app.
  return {"Messaging": 0.591, "Email": 0.175, "Productivity": 0.211,
    "Social": 0.255, "Entertainment": 0.212, "Games": 0.248, "Alert": 0.125,
    "Other": 0.2}

def _launch_mix():
  # Relative frequency of categories among spontaneous app launches.
  return {"Messaging": 0.35, "Email": 0.1, "Productivity": 0.1,
    "Social": 0.15, "Entertainment": 0.1, "Games": 0.05, "Alert": 0.02,
    "System": 0.13}

@dataclasses.dataclass(frozen=True)
class genconfig:
  """
  Every knob of the synthetic population. Defaults reproduce the per
  category rates and positive fractions of a month-long field study; the
  remaining distributions (sensor payloads, session habits) are stated
  here and are not claimed to match any real population.
  """
  num_users: int = 60
  num_days: int = 35
  seed: int = 0
  # Monday 2016-06-06 00:00, local time expressed as epoch seconds.
  start_time: float = 1465171200.0
  notification_rates: dict = dataclasses.field(default_factory=_category_rates)
  positive_rates: dict = dataclasses.field(default_factory=_category_positives)
  launch_mix: dict = dataclasses.field(default_factory=_launch_mix)
  # Spread of per user notification volume (lognormal sigma, mean kept at 1)
  rate_spread: float = 0.5
  # Usage intensity model
  sessions_per_day: float = 60.0
  extra_launches_per_session: float = 1.5
  unlock_probability: float = 0.75
  activity_spread: float = 0.3
  morning_peak_hour: float = 8.5
  evening_peak_hour: float = 20.0
  night_level: float = 0.08
  phase_spread_hours: float = 0.75
  # Attendance model: logistic(logit(category rate) + user bias + signal)
  signal_strength: float = 1.0
  coef_unlocks: float = 0.9
  coef_launches: float = 0.9
  coef_notifications: float = 0.6
  coef_time_of_day: float = 0.3
  center_unlocks: float = 0.15
  center_launches: float = 0.25
  center_notifications: float = 1.4
  usage_window_s: float = 300.0
  notification_window_s: float = 3600.0
  user_bias_sd: float = 0.5
  # Periodical sensors report once per sampling period.
  sampling_period_min: float = 10.0
  horizon: float = sensorevents.DEFAULT_HORIZON
  apps_per_category: int = 6
  age_min: int = 18
  age_max: int = 66
  age_mean: float = 37.7
  age_sd: float = 11.05
  female_fraction: float = 147.0 / 279.0

  def validate(self):
    """ Raises ConfigError describing the first unusable value. """
    if self.num_users < 2:
      raise configuration.ConfigError("num_users must be at least 2, got {}".format(self.num_users))
    if self.num_days < 7:
      raise configuration.ConfigError("num_days must be at least 7, got {}".format(self.num_days))
    if self.sampling_period_min <= 0:
      raise configuration.ConfigError("sampling_period_min must be positive")
    if self.horizon <= 0:
      raise configuration.ConfigError("horizon must be positive")
    if self.apps_per_category < 1:
      raise configuration.ConfigError("apps_per_category must be at least 1")
    if self.sessions_per_day < 0:
      raise configuration.ConfigError("sessions_per_day must not be negative")
    notification_names = sensorevents._states(sensorevents.NOTIFICATION_CATEGORIES)
    for name, rate in self.notification_rates.items():
      if name not in notification_names:
        raise configuration.ConfigError("Unknown notification category {}".format(name))
      if rate < 0 or not math.isfinite(rate):
        raise configuration.ConfigError("Notification rate for {} must be >= 0, got {}".format(name, rate))
    for name, rate in self.positive_rates.items():
      if not 0 < rate < 1:
        raise configuration.ConfigError("Positive rate for {} must lie in (0,1), got {}".format(name, rate))
    for name in self.notification_rates:
      if self.notification_rates[name] > 0 and name not in self.positive_rates:
        raise configuration.ConfigError("Category {} has a rate but no positive rate".format(name))
    launch_names = sensorevents._states(sensorevents.LAUNCH_CATEGORIES)
    for name, share in self.launch_mix.items():
      if name not in launch_names or share < 0:
        raise configuration.ConfigError("Bad launch mix entry {}={}".format(name, share))

  @classmethod
  def from_dict(cls, values):
    return configuration.merge(cls(), values)

def _logit(p):
  return math.log(p / (1.0 - p))

def _sigmoid(z):
  return 1.0 / (1.0 + math.exp(-z))

class diurnal:
  """
  Two peak (morning and evening) daily activity profile, shifted per user
  and normalized so its mean over a day is 1. Used both as point process
  intensity and as the time of day term of the attendance model.
  """
  def __init__(self, config, shift_hours=0.0):
    self.config = config
    self.shift = shift_hours
    minutes = np.arange(1440) / 60.0
    raw = self._raw(minutes)
    self.scale = 1.0 / raw.mean()
    self.peak = raw.max() * self.scale

  def _raw(self, hours):
    c = self.config
    h = np.mod(np.asarray(hours, dtype=float) - self.shift, 24.0)
    morning = np.exp(-0.5 * ((h - c.morning_peak_hour) / 1.5) ** 2)
    evening = 1.2 * np.exp(-0.5 * ((h - c.evening_peak_hour) / 2.0) ** 2)
    daytime = 0.5 * ((h > 9.5) & (h < 18.0))
    return c.night_level + morning + evening + daytime

  def level(self, timestamps):
    """ Profile value (mean 1) at the given epoch seconds. """
    hours = np.mod(np.asarray(timestamps, dtype=float), SECONDS_PER_DAY) / 3600.0
    return self._raw(hours) * self.scale

  def sample(self, rng, rate_per_day, start, end):
    """
    Inhomogeneous Poisson event times in [start, end) with intensity
    rate_per_day * level(t), drawn by thinning a homogeneous process.
    """
    if rate_per_day <= 0 or end <= start:
      return np.zeros(0)
    days = (end - start) / SECONDS_PER_DAY
    n = rng.poisson(rate_per_day * self.peak * days)
    candidates = np.sort(rng.uniform(start, end, size=n))
    keep = rng.uniform(0.0, self.peak, size=n) < self.level(candidates)
    return np.floor(candidates[keep])

class _userbuilder:
  """
  Accumulates the events of one synthetic user. Every event gets a
  sequence number so that sorting by (timestamp, sequence) is stable and
  fully determined by generation order.
  """
  def __init__(self, user_id, end=None):
    self.user_id = user_id
    self.end = end
    self.items = list()

  def add(self, timestamp, kind, payload):
    # Removals and late readings past the last study day are dropped.
    if self.end is not None and timestamp >= self.end:
      return
    self.items.append((float(timestamp), len(self.items),
      sensorevent(self.user_id, float(timestamp), kind, payload)))

  def events(self):
    self.items.sort(key=lambda item: (item[0], item[1]))
    return tuple(item[2] for item in self.items)

def _app_ids(config, category):
  return ["{}_{}".format(category.lower(), k) for k in range(config.apps_per_category)]

def _emit_periodical(config, rng, builder, start, end, profile):
  period = config.sampling_period_min * 60.0
  ticks = np.arange(start + math.floor(rng.uniform(0, period)), end, period)
  n = len(ticks)
  if n == 0:
    return
  level = profile.level(ticks)
  hours = np.mod(ticks, SECONDS_PER_DAY) / 3600.0
  weekdays = [sensorevents.day_of_week(t) for t in ticks]

  accel_mean = np.round(0.1 + 0.4 * level * rng.gamma(2.0, 0.5, size=n), 2)
  accel_max = np.round(accel_mean * (1.5 + rng.gamma(2.0, 0.5, size=n)), 2)
  drain = np.round(rng.gamma(2.0, 1.0 + level), 2)
  rx_total = np.round(rng.gamma(1.5, 4.0 * level + 0.5), 2)
  tx_total = np.round(rx_total * rng.uniform(0.05, 0.4, size=n), 2)
  cell_share = rng.uniform(0.0, 1.0, size=n)
  lux = np.round(np.where((hours > 7) & (hours < 20), rng.gamma(2.0, 150.0, size=n), rng.gamma(1.5, 5.0, size=n)), 2)
  # Ambient noise is deliberately unrelated to usage or attendance.
  noise = np.round(np.clip(rng.normal(50.0, 8.0, size=n), 20.0, 100.0), 2)
  place_draw = rng.uniform(size=n)

  for i in range(n):
    t = ticks[i]
    builder.add(t, SensorKind.ACCELEROMETER, {"mean": float(accel_mean[i]), "max": float(accel_max[i])})
    builder.add(t, SensorKind.BATTERY, {"drain": float(drain[i])})
    builder.add(t, SensorKind.DATA, {"rx_total": float(rx_total[i]), "tx_total": float(tx_total[i]),
      "rx_cell": float(np.round(rx_total[i] * cell_share[i], 2)),
      "tx_cell": float(np.round(tx_total[i] * cell_share[i], 2))})
    builder.add(t, SensorKind.LIGHT, {"lux": float(lux[i])})
    builder.add(t, SensorKind.NOISE, {"db": float(noise[i])})

    h = hours[i]
    if h >= 22 or h < 7:
      place = "Home"
    elif weekdays[i] <= 5 and 9 <= h < 17:
      place = "Work" if place_draw[i] < 0.8 else "Out"
    elif place_draw[i] < 0.5:
      place = "Home"
    elif place_draw[i] < 0.9:
      place = "Out"
    else:
      place = "Unknown"
    builder.add(t, SensorKind.SEMANTIC_LOCATION, {"place": place})

def _emit_sessions(config, rng, builder, start, end, profile, activity, unlocks, launches):
  """
  Phone usage sessions: screen on, usually an unlock followed by one or
  more app launches, occasionally the notification center or a rotation,
  and screen off. Unlock and launch times are collected for the
  attendance model.
  """
  mix_names = sorted(config.launch_mix)
  mix = np.array([config.launch_mix[name] for name in mix_names], dtype=float)
  mix = mix / mix.sum()

  for t in profile.sample(rng, config.sessions_per_day * activity, start, end):
    builder.add(t, SensorKind.SCREEN, {"state": "On"})
    if rng.uniform() >= config.unlock_probability:
      builder.add(t + 10, SensorKind.SCREEN, {"state": "Off"})
      continue

    builder.add(t + 2, SensorKind.SCREEN, {"state": "Unlocked"})
    unlocks.append(t + 2)
    if rng.uniform() < 0.25:
      builder.add(t + 3, SensorKind.NOTIFICATION_CENTER, {"action": "Open"})

    now = t + 5
    for k in range(1 + rng.poisson(config.extra_launches_per_session)):
      category = mix_names[rng.choice(len(mix_names), p=mix)]
      app_id = _app_ids(config, category)[rng.integers(config.apps_per_category)]
      builder.add(now, SensorKind.APP, {"app_id": app_id, "category": category})
      launches.append(now)
      if rng.uniform() < 0.15:
        orientation = "Landscape" if rng.uniform() < 0.5 else "Portrait"
        builder.add(now + 1, SensorKind.SCREEN_ORIENTATION, {"orientation": orientation})
      now = now + 1 + math.floor(rng.exponential(30.0))
    builder.add(now + math.floor(rng.exponential(60.0)), SensorKind.SCREEN, {"state": "Off"})

def _emit_daily_states(config, rng, builder, start, end):
  day = start
  while day < end:
    plug = day + 23 * 3600 + math.floor(rng.normal(0, 3600))
    unplug = day + 7 * 3600 + math.floor(rng.normal(0, 1800))
    for t, state in ((unplug, "NotCharging"), (plug, "Charging")):
      if start <= t < end:
        builder.add(t, SensorKind.CHARGING_STATE, {"state": state})

    for k in range(rng.poisson(1.5)):
      t = day + math.floor(rng.uniform(0, SECONDS_PER_DAY))
      if t < end:
        builder.add(t, SensorKind.RINGER_MODE, {"mode": ("Normal", "Silent", "Vibrate")[rng.integers(3)]})

    for k in range(rng.poisson(2.0)):
      t = day + math.floor(rng.uniform(0, SECONDS_PER_DAY))
      if t < end:
        state = ("Music", "NoMusic", "Speaker", "Headphones")[rng.integers(4)]
        builder.add(t, SensorKind.AUDIO, {"state": state})
    day += SECONDS_PER_DAY

def _window_count(times, t, window):
  """ Number of sorted times in [t - window, t) """
  return bisect.bisect_left(times, t) - bisect.bisect_left(times, t - window)

def attendance_probability(config, category, user_bias, n_unlocks, n_launches, n_notifications, level):
  """
  Planted ground truth model. Inputs are counts over windows that end
  strictly before the notification is posted, so the outcome never
  depends on anything at or after the posting time.
  """
  signal = (config.coef_unlocks * (math.log1p(n_unlocks) - config.center_unlocks)
    + config.coef_launches * (math.log1p(n_launches) - config.center_launches)
    + config.coef_notifications * (math.log1p(n_notifications) - config.center_notifications)
    + config.coef_time_of_day * (level - 1.0))
  z = _logit(config.positive_rates[category]) + user_bias + config.signal_strength * signal
  return _sigmoid(z)

def _emit_notifications(config, rng, builder, start, end, profile, user_bias, unlocks, launches):
  posts = list()
  for category in sorted(config.notification_rates):
    rate = config.notification_rates[category]
    if rate <= 0:
      continue
    sigma = config.rate_spread
    volume = rng.lognormal(-0.5 * sigma * sigma, sigma) if sigma > 0 else 1.0
    apps = _app_ids(config, category)
    for t in profile.sample(rng, rate * volume, start, end):
      posts.append((float(t), category, apps[rng.integers(len(apps))]))
  posts.sort()

  notification_times = list()
  for t, category, app_id in posts:
    p = attendance_probability(config, category, user_bias,
      _window_count(unlocks, t, config.usage_window_s),
      _window_count(launches, t, config.usage_window_s),
      _window_count(notification_times, t, config.notification_window_s),
      float(profile.level(t)))
    notification_times.append(t)
    builder.add(t, SensorKind.NOTIFICATION, {"action": "Post", "app_id": app_id, "category": category})

    if rng.uniform() < p:
      delay = min(config.horizon - 1.0, 2.0 + math.floor(rng.exponential(90.0)))
      builder.add(t + delay - 1, SensorKind.SCREEN, {"state": "Unlocked"})
      builder.add(t + delay, SensorKind.APP, {"app_id": app_id, "category": category if category != "Other" else "System"})
      builder.add(t + delay + 1, SensorKind.NOTIFICATION, {"action": "Remove", "app_id": app_id, "category": category})
      bisect.insort(unlocks, t + delay - 1)
      bisect.insort(launches, t + delay)
    elif rng.uniform() < 0.6:
      later = t + 1 + math.floor(rng.exponential(1800.0))
      builder.add(later, SensorKind.NOTIFICATION, {"action": "Remove", "app_id": app_id, "category": category})

def generate_user(config, index, seed_sequence):
  """ One user's trace, driven only by that user's own seed sequence. """
  rng = np.random.default_rng(seed_sequence)
  user_id = "u{:03d}".format(index)

  age = int(np.clip(round(rng.normal(config.age_mean, config.age_sd)), config.age_min, config.age_max))
  gender = "female" if rng.uniform() < config.female_fraction else "male"
  activity = rng.lognormal(0.0, config.activity_spread)
  user_bias = rng.normal(0.0, config.user_bias_sd)
  profile = diurnal(config, rng.normal(0.0, config.phase_spread_hours))

  start = config.start_time
  end = config.start_time + config.num_days * SECONDS_PER_DAY
  builder = _userbuilder(user_id, end)

  _emit_periodical(config, rng, builder, start, end, profile)
  unlocks = list()
  launches = list()
  _emit_sessions(config, rng, builder, start, end, profile, activity, unlocks, launches)
  _emit_daily_states(config, rng, builder, start, end)
  unlocks.sort()
  launches.sort()
  _emit_notifications(config, rng, builder, start, end, profile, user_bias, unlocks, launches)

  return sensorevents.usertrace(user_id, age, gender, builder.events())

def generate(config):
  """
  Generates the whole synthetic study. Each user draws from a child of the
  configured seed, so a user's trace does not depend on how many users
  came before it and identical configs give identical output.
  """
  config.validate()
  children = np.random.SeedSequence(config.seed).spawn(config.num_users)
  traces = list()
  for index, child in enumerate(children):
    traces.append(generate_user(config, index, child))
    logging.getLogger(__name__).debug("Generated user %d with %d events", index, len(traces[-1].events))
  return traces

@dataclasses.dataclass(frozen=True)
class categorysummary:
  category: str
  count: int
  mean_per_user_day: float
  sd_per_user_day: float
  # None when the category never occurred.
  positive_fraction: float = None

def summarize(traces, labels=None, horizon=sensorevents.DEFAULT_HORIZON):
  """
  Per category notification statistics: total count, mean and standard
  deviation per user and day, and the fraction of positive cases. Labels
  are computed from the traces when not supplied.
  """
  if labels is None:
    labels = dict((t.user_id, sensorevents.label_notifications(t, horizon)) for t in traces)

  per_user_day = collections.defaultdict(list)
  totals = collections.Counter()
  positives = collections.Counter()
  categories = sensorevents._states(sensorevents.NOTIFICATION_CATEGORIES)

  for trace in traces:
    if not trace.events:
      continue
    first_day = math.floor(trace.start_time / SECONDS_PER_DAY)
    ndays = math.floor(trace.end_time / SECONDS_PER_DAY) - first_day + 1
    counts = dict((c, np.zeros(ndays)) for c in categories)
    for n in labels.get(trace.user_id, ()):
      day = math.floor(n.post_time / SECONDS_PER_DAY) - first_day
      counts.setdefault(n.category, np.zeros(ndays))[day] += 1
      totals[n.category] += 1
      positives[n.category] += n.label
    for c in counts:
      per_user_day[c].extend(counts[c])

  rows = list()
  for c in categories:
    values = np.asarray(per_user_day.get(c, []), dtype=float)
    rows.append(categorysummary(
      category=c,
      count=int(totals[c]),
      mean_per_user_day=float(values.mean()) if len(values) else 0.0,
      sd_per_user_day=float(values.std(ddof=1)) if len(values) > 1 else 0.0,
      positive_fraction=positives[c] / float(totals[c]) if totals[c] else None))
  return rows

def write_summary(rows, path):
  with open(path, "w") as out:
    out.write("category\tcount\tmean_per_user_day\tsd_per_user_day\tpositive_fraction\n")
    for r in rows:
      fraction = "" if r.positive_fraction is None else "{:.4f}".format(r.positive_fraction)
      out.write("{}\t{}\t{:.3f}\t{:.3f}\t{}\n".format(r.category, r.count,
        r.mean_per_user_day, r.sd_per_user_day, fraction))

def write_dataset(traces, directory, config):
  """
  Writes the event log, demographics and the resolved generator config
  next to each other so the dataset can be regenerated from its folder.
  """
  os.makedirs(directory, exist_ok=True)
  sensorevents.write_event_log(traces, os.path.join(directory, "events.tsv"),
    os.path.join(directory, "demographics.tsv"))
  with open(os.path.join(directory, "genconfig.json"), "w") as out:
    json.dump(configuration.as_dict(config), out, sort_keys=True, indent=2)
    out.write("\n")
