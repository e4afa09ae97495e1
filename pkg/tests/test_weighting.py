import math

import numpy as np
import pytest

from Notif_Attendance import weighting
from Notif_Attendance.sensorevents import labelednotification
from Notif_Attendance.weighting import WeightScheme

def labeled(user_id, category, label):
  return labelednotification(user_id, 0.0, "app", category, label)

@pytest.fixture
def instances():
  out = [labeled("A", "Messaging", 1)] * 3 + [labeled("A", "Messaging", 0)] * 2
  out += [labeled("A", "Email", 0)] * 4
  out += [labeled("B", "Messaging", 1)] * 100
  return out

class TestFrequencyTable:
  def test_counts(self, instances):
    table = weighting.build_frequency_table(instances)
    assert table.count(1, "A", "Messaging") == 3
    assert table.count(0, "A", "Messaging") == 2
    assert table.count(1, "A", "Email") == 0
    assert table.total == len(instances)
    assert table.users() == ["A", "B"]

  def test_positive_rate_fallbacks(self, instances):
    table = weighting.build_frequency_table(instances)
    np.testing.assert_allclose(table.positive_rate("A", "Messaging"), 0.6)
    np.testing.assert_allclose(table.positive_rate("A", "Email"), 0.0)
    # B never saw Email: category rate over users.
    np.testing.assert_allclose(table.positive_rate("B", "Email"), 0.0)
    # Nobody saw Games: global rate.
    np.testing.assert_allclose(table.positive_rate("B", "Games"), 103.0 / 109.0)

  def test_unlabeled_instance(self):
    with pytest.raises(weighting.WeightingError):
      weighting.build_frequency_table([labeled("A", "Email", None)])

class TestSchemeWeight:
  @pytest.mark.parametrize("f,scheme,expected", [
    (1, WeightScheme.INVERSE_FREQUENCY, 1.0),
    (4, WeightScheme.INVERSE_FREQUENCY, 0.25),
    (100, WeightScheme.INVERSE_SQRT, 0.1),
    (100, WeightScheme.INVERSE_LOG, 1.0 / math.log(100)),
    (2, WeightScheme.INVERSE_LOG, 1.0),
    (100, WeightScheme.UNIFORM, 1.0),
  ])
  def test_values(self, f, scheme, expected):
    np.testing.assert_allclose(weighting.scheme_weight(f, scheme), expected)

  def test_inverse_log_example(self):
    assert round(weighting.scheme_weight(100, WeightScheme.INVERSE_LOG), 4) == 0.2171

  def test_zero_frequency(self):
    with pytest.raises(weighting.WeightingError):
      weighting.scheme_weight(0, WeightScheme.UNIFORM)

  def test_scheme_names(self):
    assert weighting.scheme_from_name("inv-log") == WeightScheme.INVERSE_LOG
    assert weighting.DEFAULT_SCHEME == WeightScheme.INVERSE_LOG
    with pytest.raises(weighting.WeightingError):
      weighting.scheme_from_name("log")

class TestAssignWeights:
  def test_inverse_frequency_balances_groups(self, instances):
    table = weighting.build_frequency_table(instances)
    w = weighting.assign_weights(instances, table, WeightScheme.INVERSE_FREQUENCY)
    groups = dict()
    for instance, value in zip(instances, w):
      key = (instance.label, instance.user_id, instance.category)
      groups[key] = groups.get(key, 0.0) + value
    np.testing.assert_allclose(list(groups.values()), 1.0)

  @pytest.mark.parametrize("scheme", list(WeightScheme))
  def test_weights_in_unit_interval(self, instances, scheme):
    table = weighting.build_frequency_table(instances)
    w = weighting.assign_weights(instances, table, scheme)
    assert np.all(w > 0)
    assert np.all(w <= 1.0)

  def test_rarer_groups_weigh_more(self, instances):
    table = weighting.build_frequency_table(instances)
    for scheme in (WeightScheme.INVERSE_FREQUENCY, WeightScheme.INVERSE_SQRT, WeightScheme.INVERSE_LOG):
      rare = weighting.weight(labeled("A", "Messaging", 0), table, scheme)
      common = weighting.weight(labeled("B", "Messaging", 1), table, scheme)
      assert rare >= common

  def test_unseen_group(self, instances):
    table = weighting.build_frequency_table(instances)
    with pytest.raises(weighting.WeightingError):
      weighting.weight(labeled("C", "Messaging", 1), table, WeightScheme.UNIFORM)
