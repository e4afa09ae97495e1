import dataclasses

import numpy as np
import pytest

from Notif_Attendance import pipelines
from Notif_Attendance import rnn
from Notif_Attendance import sensorevents
from Notif_Attendance import synthgen
from Notif_Attendance.sensorevents import SensorKind

# Monday 2016-06-06 00:00 UTC, the generator's default study start.
DAY0 = 1465171200.0

def event(t, kind, user_id="a", **payload):
  return sensorevents.sensorevent(user_id, float(t), kind, payload)

def post(t, app_id="chat", category="Messaging", user_id="a"):
  return event(t, SensorKind.NOTIFICATION, user_id, action="Post", app_id=app_id, category=category)

def launch(t, app_id="chat", category="Messaging", user_id="a"):
  return event(t, SensorKind.APP, user_id, app_id=app_id, category=category)

def trace(events, user_id="a", age=30, gender="female"):
  return sensorevents.usertrace(user_id, age, gender, tuple(sorted(events, key=lambda e: e.timestamp)))

@pytest.fixture
def make_event():
  return event

@pytest.fixture
def make_post():
  return post

@pytest.fixture
def make_launch():
  return launch

@pytest.fixture
def make_trace():
  return trace

@pytest.fixture
def day0():
  return DAY0

@pytest.fixture
def small_trace():
  """ An hour of one user: readings, a screen session and two notifications. """
  t0 = DAY0 + 9 * 3600.0
  events = [
    event(t0, SensorKind.NOISE, db=40.0),
    event(t0 + 60, SensorKind.SCREEN, state="On"),
    event(t0 + 65, SensorKind.SCREEN, state="Unlocked"),
    post(t0 + 120),
    launch(t0 + 300),
    event(t0 + 600, SensorKind.NOISE, db=55.0),
    event(t0 + 610, SensorKind.LIGHT, lux=120.0),
    post(t0 + 1800, app_id="mail", category="Email"),
    event(t0 + 3000, SensorKind.SCREEN, state="Off"),
  ]
  return trace(events)

def tiny_genconfig(**changes):
  values = dict(num_users=8, num_days=10, seed=3, sessions_per_day=30.0,
    sampling_period_min=30.0)
  values.update(changes)
  return synthgen.genconfig(**values)

@pytest.fixture(scope="session")
def small_study():
  """ Eight users over ten days, generated once per test session. """
  return pipelines.dataset(synthgen.generate(tiny_genconfig()))

@pytest.fixture
def tiny_experiment():
  """ Desk sized learners so end to end runs finish in seconds. """
  exp = pipelines.experiment()
  return dataclasses.replace(exp,
    trees=dataclasses.replace(exp.trees, n_estimators=10, max_depth_grid=(2,), subsample_grid=(1.0,)),
    network=rnn.rnnconfig(embed=4, units=6, seq_len=20, batch_lo=2, batch_hi=4, max_epochs=2,
      patience=1, learning_rate=0.01),
    scoring=dataclasses.replace(exp.scoring, holdout_users=1, trials=2, ablation_seeds=1))

@pytest.fixture
def rng():
  return np.random.default_rng(42)
