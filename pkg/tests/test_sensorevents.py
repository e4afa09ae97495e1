import math

import pytest

from Notif_Attendance import sensorevents
from Notif_Attendance.sensorevents import SensorKind

class TestSensorInventory:
  def test_fourteen_recorded_channels(self):
    recorded = sensorevents.PERIODICAL | sensorevents.EVENT_DRIVEN
    assert len(recorded) == 14
    assert not sensorevents.PERIODICAL & sensorevents.EVENT_DRIVEN
    assert set(SensorKind) == recorded | sensorevents.DERIVED

  def test_channel_class(self):
    assert sensorevents.channel_class(SensorKind.NOISE) == "periodical"
    assert sensorevents.channel_class(SensorKind.SCREEN) == "event-driven"
    assert sensorevents.channel_class(SensorKind.TIME_OF_DAY) == "derived"

  def test_every_kind_has_payload_schema(self):
    for kind in SensorKind:
      assert sensorevents.PAYLOAD_SCHEMA[kind]

class TestLabelNotifications:
  def test_same_app_launch_within_horizon(self, make_trace, make_post, make_launch):
    labels = sensorevents.label_notifications(make_trace([make_post(1000), make_launch(1300), make_launch(5000, "x")]))
    assert [n.label for n in labels] == [1]

  def test_launch_after_horizon(self, make_trace, make_post, make_launch):
    labels = sensorevents.label_notifications(make_trace([make_post(1000), make_launch(1601)]))
    assert [n.label for n in labels] == [0]

  def test_other_app_does_not_count(self, make_trace, make_post, make_launch):
    labels = sensorevents.label_notifications(make_trace([make_post(1000), make_launch(1100, "other"),
      make_launch(9000, "x")]))
    assert [n.label for n in labels] == [0]

  def test_horizon_is_inclusive(self, make_trace, make_post, make_launch):
    labels = sensorevents.label_notifications(make_trace([make_post(1000), make_launch(1600), make_launch(9000, "x")]))
    assert labels[0].label == 1

  def test_launch_at_post_time_does_not_count(self, make_trace, make_post, make_launch):
    labels = sensorevents.label_notifications(make_trace([make_launch(1000), make_post(1000), make_launch(9000, "x")]))
    assert labels[0].label == 0

  def test_one_label_per_post_in_order(self, small_trace):
    labels = sensorevents.label_notifications(small_trace)
    posts = [e for e in small_trace.events if e.is_notification_post()]
    assert len(labels) == len(posts)
    assert [n.post_time for n in labels] == [e.timestamp for e in posts]
    assert [n.category for n in labels] == ["Messaging", "Email"]
    assert [n.label for n in labels] == [1, 0]

  def test_truncated_near_trace_end(self, small_trace):
    labels = sensorevents.label_notifications(small_trace)
    # The second post is 1200 s before the last event, the first 2880 s.
    assert [n.truncated for n in labels] == [False, False]
    short = sensorevents.label_notifications(small_trace, horizon=1500)
    assert [n.truncated for n in short] == [False, True]

  def test_unsorted_trace_is_rejected(self, make_post, make_launch):
    trace = sensorevents.usertrace("a", 30, "male", (make_post(1000), make_launch(900)))
    with pytest.raises(sensorevents.TraceError):
      sensorevents.label_notifications(trace)

  def test_horizon_must_be_positive(self, small_trace):
    with pytest.raises(ValueError):
      sensorevents.label_notifications(small_trace, horizon=0)

class TestValidateTrace:
  def test_clean_trace(self, small_trace):
    assert sensorevents.validate_trace(small_trace).is_empty()

  def test_decreasing_timestamps(self, make_event):
    trace = sensorevents.usertrace("a", 30, "male", (
      make_event(10, SensorKind.NOISE, db=40.0), make_event(5, SensorKind.NOISE, db=41.0)))
    report = sensorevents.validate_trace(trace)
    assert len(report) == 1
    assert report.count("ordering") == 1

  def test_nan_payload(self, make_trace, make_event):
    report = sensorevents.validate_trace(make_trace([make_event(10, SensorKind.LIGHT, lux=math.nan)]))
    assert len(report) == 1
    assert report.count("non-finite") == 1

  def test_unknown_key_and_state(self, make_trace, make_event):
    report = sensorevents.validate_trace(make_trace([
      make_event(10, SensorKind.LIGHT, lux=3.0, colour="red"),
      make_event(11, SensorKind.SCREEN, state="Sideways")]))
    assert report.count("unknown-key") == 1
    assert report.count("bad-value") == 1

class TestTimeOfDay:
  def test_ticks_on_full_hours(self, make_trace, make_event, day0):
    trace = make_trace([make_event(day0 + 1800, SensorKind.NOISE, db=1.0),
      make_event(day0 + 3 * 3600 + 5, SensorKind.NOISE, db=1.0)])
    ticks = sensorevents.time_of_day_ticks(trace)
    assert [t.timestamp for t in ticks] == [day0 + 1800, day0 + 3600, day0 + 7200, day0 + 10800]
    # Monday, hours shifted to 1-24.
    assert ticks[0].payload == {"hour": 1.0, "weekday": 1.0}
    assert ticks[-1].payload["hour"] == 4.0

  def test_empty_trace(self, make_trace):
    assert sensorevents.time_of_day_ticks(make_trace([])) == []

class TestEventLog:
  def test_write_read(self, tmp_path, small_trace):
    events, demographics = tmp_path / "events.tsv", tmp_path / "demographics.tsv"
    sensorevents.write_event_log([small_trace], str(events), str(demographics))
    traces = sensorevents.read_event_log(str(events), str(demographics))
    assert len(traces) == 1
    assert traces[0] == small_trace

  def test_labels_file(self, tmp_path, small_trace):
    labels = {"a": sensorevents.label_notifications(small_trace)}
    path = str(tmp_path / "labels.tsv")
    sensorevents.write_labels(labels, path)
    assert sensorevents.read_labels(path) == labels

  def test_bad_header(self, tmp_path):
    events, demographics = tmp_path / "events.tsv", tmp_path / "demographics.tsv"
    events.write_text("something else\n")
    demographics.write_text(sensorevents.DEMOGRAPHICS_HEADER + "\n")
    with pytest.raises(sensorevents.TraceError):
      sensorevents.read_event_log(str(events), str(demographics))
