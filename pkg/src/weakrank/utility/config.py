import dataclasses
import re
from pathlib import Path
from typing import Any, Iterable, Mapping, Type, TypeVar, Union

import yaml

from weakrank.errors import ConfigError

T = TypeVar("T")

# `#` opens a comment at the start of a line or after whitespace
_COMMENT = re.compile(r"(^|\s)#.*$")

class dotdict(dict):
    """dot.notation access to dictionary attributes"""
    __getattr__ = dict.get
    __setattr__ = dict.__setitem__
    __delattr__ = dict.__delitem__

def parse_value(text: str) -> Any:
    """Coerce a raw config value: int, then float, then a YAML scalar, then the raw string."""
    text = text.strip()
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError:
        return text
    if value is None or isinstance(value, (bool, str, list)):
        return value
    return text

def parse_config(lines: Iterable[str], source: str = "<config>") -> dotdict:
    settings = dotdict()
    for line_no, raw in enumerate(lines, start=1):
        line = _COMMENT.sub("", raw.rstrip("\n")).strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"{source}:{line_no}: expected 'key = value', got '{raw.rstrip()}'")
        key, value = line.split('=', 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{line_no}: empty key")
        if key in settings:
            raise ConfigError(f"{source}:{line_no}: duplicate key '{key}'")
        settings[key] = parse_value(value)
    return settings

def load_config(file_path: Union[str, Path]) -> dotdict:
    path = Path(file_path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    with open(path, 'r', encoding='utf-8') as stream:
        return parse_config(stream, source=str(path))

def apply_overrides(settings: Mapping[str, Any], overrides: Iterable[str]) -> dotdict:
    """Apply `key=value` overrides (as given to --set) on top of `settings`."""
    merged = dotdict(settings)
    for item in overrides or []:
        if '=' not in item:
            raise ConfigError(f"Override must look like key=value, got '{item}'")
        key, value = item.split('=', 1)
        merged[key.strip()] = parse_value(value)
    return merged

def section(settings: Mapping[str, Any], prefix: str, keep_bare: bool = True) -> dotdict:
    """Keys under `prefix.` with the prefix stripped; bare keys are kept as well unless `keep_bare` is off."""
    result = dotdict()
    for key, value in settings.items():
        if key.startswith(prefix + '.'):
            result[key[len(prefix) + 1:]] = value
        elif keep_bare and '.' not in key:
            result.setdefault(key, value)
    return result

def build_dataclass(cls: Type[T], params: Mapping[str, Any], strict: bool = True) -> T:
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(params) - names)
    if strict and unknown:
        raise ConfigError(f"Unknown {cls.__name__} keys {unknown}; valid keys are {sorted(names)}")
    try:
        return cls(**{k: v for k, v in params.items() if k in names})
    except TypeError as err:
        raise ConfigError(f"Invalid {cls.__name__}: {err}") from err

def dump_config(settings: Mapping[str, Any]) -> str:
    lines = []
    for key in sorted(settings):
        value = settings[key]
        if isinstance(value, bool):
            value = str(value).lower()
        elif isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"

def as_list(value: Any) -> list:
    """Config values holding lists are written comma-separated."""
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return list(value)
    return [v.strip() for v in str(value).split(',') if v.strip()]
