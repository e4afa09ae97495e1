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
import enum
import math

import numpy as np

class WeightingError(ValueError):
  """ Raised when an instance has no frequency to be weighted by. """

class WeightScheme(enum.Enum):
  INVERSE_FREQUENCY = "inv"
  INVERSE_SQRT = "inv-sqrt"
  INVERSE_LOG = "inv-log"
  UNIFORM = "uniform"

DEFAULT_SCHEME = WeightScheme.INVERSE_LOG

def scheme_from_name(name):
  try:
    return WeightScheme(name)
  except ValueError:
    raise WeightingError("Unknown weighting scheme '{}', expected one of {}".format(
      name, ", ".join(s.value for s in WeightScheme)))

def _group(instance):
  """ (attended, user, category) of a labeled notification or sample """
  label = getattr(instance, "label")
  if label is None:
    raise WeightingError("Instance of user {} has no label".format(instance.user_id))
  return (int(label), instance.user_id, instance.category)

class frequencytable:
  """
  Counts of attended and unattended notifications per user and category,
  taken over the training split only.
  """
  def __init__(self, counts):
    self.counts = dict(counts)

  def count(self, attended, user_id, category):
    return self.counts.get((int(attended), user_id, category), 0)

  @property
  def total(self):
    return sum(self.counts.values())

  def users(self):
    return sorted(set(u for a, u, c in self.counts))

  def positive_rate(self, user_id, category):
    """
    Training positive rate of the user in the category. Falls back to the
    category rate over all users, then to the global rate, when the more
    specific cell has no instances.
    """
    pos = self.count(1, user_id, category)
    neg = self.count(0, user_id, category)
    if pos + neg > 0:
      return pos / float(pos + neg)

    pos = sum(n for (a, u, c), n in self.counts.items() if c == category and a == 1)
    both = sum(n for (a, u, c), n in self.counts.items() if c == category)
    if both > 0:
      return pos / float(both)

    total = self.total
    if total == 0:
      return 0.0
    return sum(n for (a, u, c), n in self.counts.items() if a == 1) / float(total)

def build_frequency_table(instances):
  return frequencytable(collections.Counter(_group(i) for i in instances))

def scheme_weight(f, scheme):
  """ Weight for a group of frequency f. """
  if f < 1:
    raise WeightingError("Group frequency must be at least 1, got {}".format(f))
  if scheme == WeightScheme.INVERSE_FREQUENCY:
    return 1.0 / f
  if scheme == WeightScheme.INVERSE_SQRT:
    return 1.0 / math.sqrt(f)
  if scheme == WeightScheme.INVERSE_LOG:
    # Natural log floored at 1 so that small groups never exceed weight 1.
    return 1.0 / max(math.log(f), 1.0)
  if scheme == WeightScheme.UNIFORM:
    return 1.0
  raise WeightingError("Unknown weighting scheme {}".format(scheme))

def weight(instance, table, scheme):
  attended, user_id, category = _group(instance)
  f = table.count(attended, user_id, category)
  if f == 0:
    raise WeightingError("No training frequency for attended={} user={} category={}".format(
      attended, user_id, category))
  return scheme_weight(f, scheme)

def assign_weights(instances, table, scheme):
  """ Weights of many instances as a numpy vector """
  return np.array([weight(i, table, scheme) for i in instances], dtype=float)

def positive_rate(table, user_id, category):
  return table.positive_rate(user_id, category)
