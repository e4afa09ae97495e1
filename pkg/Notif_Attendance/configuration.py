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
import os

class ConfigError(ValueError):
  """ Raised for configuration values that can not be used. """

class configuration:
  def __init__(self, name, directory=None):
    self.name = name
    self.directory = directory or "."

  @property
  def filename(self):
    return os.path.join(self.directory, "config_"+self.name+".json")

  def exists(self):
    return os.path.isfile(self.filename)

  def load(self):
    """
    Loads the configuration file. Filename format is based on the name given
    in the constructor. Prepended by "config_" with ".json" suffix and looked
    up in the directory given to the constructor. If all goes well, returns
    a dictionary of configuration parameters.

    A missing file is not an error: every component has usable defaults, so
    we log the fact and hand back an empty dictionary.
    """
    if not self.exists():
      logging.getLogger(__name__).info("No %s, using defaults", self.filename)
      return dict()

    with open(self.filename, 'r') as filehandle:
      filecontent = filehandle.read(256*1024) # Config files should be << 256kB

    try:
      loaded = json.loads(filecontent)
    except ValueError as ve:
      raise ConfigError("{} is not valid JSON: {}".format(self.filename, str(ve)))

    if not isinstance(loaded, dict):
      raise ConfigError("{} must hold a JSON object".format(self.filename))
    return loaded

def merge(defaults, overrides):
  """
  Returns a copy of dataclass instance 'defaults' with fields replaced by
  the values in dictionary 'overrides'. Keys that do not name a field are
  rejected. Lists become tuples.
  """
  if not overrides:
    return defaults

  names = set(f.name for f in dataclasses.fields(defaults))
  changes = dict()
  for key, value in overrides.items():
    if key not in names:
      raise ConfigError("Unknown {} parameter '{}'".format(type(defaults).__name__, key))
    if isinstance(value, list):
      value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
    changes[key] = value

  return dataclasses.replace(defaults, **changes)

def as_dict(config):
  """ JSON friendly dictionary of a config dataclass, used in manifests. """
  result = dict()
  for f in dataclasses.fields(config):
    value = getattr(config, f.name)
    if isinstance(value, tuple):
      value = [list(v) if isinstance(v, tuple) else v for v in value]
    elif isinstance(value, dict):
      value = dict(value)
    elif hasattr(value, "value") and not isinstance(value, (int, float, str)):
      value = value.value
    result[f.name] = value
  return result
