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
import logging

import numpy as np

from Notif_Attendance import configuration
from Notif_Attendance import sparseencode

class SequencingError(ValueError):
  """ Raised when streams can not be arranged into buckets. """

@dataclasses.dataclass(frozen=True)
class sequencingconfig:
  seq_len: int = 50
  batch_lo: int = 15
  batch_hi: int = 45

  def __post_init__(self):
    if self.seq_len < 1:
      raise configuration.ConfigError("seq_len must be at least 1, got {}".format(self.seq_len))
    if not 1 <= self.batch_lo <= self.batch_hi:
      raise configuration.ConfigError("Batch bounds must satisfy 1 <= lo <= hi, got {}..{}".format(
        self.batch_lo, self.batch_hi))

def choose_batch_size(num_users, lo=15, hi=45):
  """ Smallest batch size in [lo, hi] that leaves the fewest users over. """
  if num_users < 1:
    raise SequencingError("Need at least one user, got {}".format(num_users))
  best = lo
  for b in range(lo, hi + 1):
    if num_users % b < num_users % best:
      best = b
  return best

class bucket:
  """
  A group of users trained together. Slot u of every batch belongs to
  users[u]; a None user is an all padding dummy. All slots are padded to
  the longest stream of the bucket, so the last batch may be shorter than
  seq_len.
  """
  def __init__(self, users, slots, seq_len):
    self.users = tuple(users)
    self.slots = [list(s) for s in slots]
    self.seq_len = seq_len
    self.length = len(self.slots[0]) if self.slots else 0

  @property
  def size(self):
    return len(self.users)

  @property
  def num_batches(self):
    return (self.length + self.seq_len - 1) // self.seq_len

  def batch(self, k):
    """ For each slot, samples [k*L, (k+1)*L) """
    if not 0 <= k < self.num_batches:
      raise IndexError("Bucket has {} batches, asked for {}".format(self.num_batches, k))
    start = k * self.seq_len
    return [s[start:start + self.seq_len] for s in self.slots]

  def batches(self):
    return [self.batch(k) for k in range(self.num_batches)]

  def dense(self, schema, dtype=np.float64):
    """
    Whole bucket as arrays X (slots, steps, input width), y and w
    (slots, steps). Batches are slices along the step axis.
    """
    X = np.zeros((self.size, self.length, schema.input_width), dtype=dtype)
    y = np.zeros((self.size, self.length), dtype=dtype)
    w = np.zeros((self.size, self.length), dtype=dtype)
    for u, stream in enumerate(self.slots):
      X[u], y[u], w[u] = sparseencode.dense_matrix(stream, schema, dtype)
    return X, y, w

def build_buckets(user_streams, config=None, batch_size=None):
  """
  Arranges per user sample streams (a mapping of user id to samples) into
  buckets. Users are ordered by stream length so neighbors need little
  padding, then chunked into buckets of the chosen batch size. Users left
  over form a final bucket topped up with dummy users.
  """
  config = config or sequencingconfig()
  if not user_streams:
    raise SequencingError("No user streams to arrange")
  for user_id, stream in user_streams.items():
    if not stream:
      raise SequencingError("Stream of user {} is empty".format(user_id))

  size = batch_size or choose_batch_size(len(user_streams), config.batch_lo, config.batch_hi)
  ordered = sorted(user_streams, key=lambda u: len(user_streams[u]))

  buckets = list()
  for start in range(0, len(ordered), size):
    users = list(ordered[start:start + size])
    longest = max(len(user_streams[u]) for u in users)
    slots = list()
    for u in users:
      stream = list(user_streams[u])
      slots.append(stream + [sparseencode.padding_sample(u)] * (longest - len(stream)))
    while len(users) < size:
      users.append(None)
      slots.append([sparseencode.padding_sample()] * longest)
    buckets.append(bucket(users, slots, config.seq_len))

  logging.getLogger(__name__).debug("%d users in %d buckets of %d", len(ordered), len(buckets), size)
  return buckets

def iterate_for_training(buckets):
  """
  Yields (bucket index, batch index, batch, carry) in order. Carry is False
  at the first batch of every bucket, where the recurrent state resets.
  """
  for b, bkt in enumerate(buckets):
    for k in range(bkt.num_batches):
      yield b, k, bkt.batch(k), k > 0

def de_interleave(bkt):
  """ Streams of the bucket's real users with padding stripped. """
  streams = dict()
  for user_id, slot in zip(bkt.users, bkt.slots):
    if user_id is None:
      continue
    streams[user_id] = [s for s in slot if not s.padding]
  return streams
