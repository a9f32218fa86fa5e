"""Dotted-key pipeline configuration.

The file format is one ``key = value`` per line, values in JSON syntax,
``#`` starting a comment::

    seed = 7
    dynpoints.W = 20
    synth.sensors = ["lidar_conic"]
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

# key -> (type, default); a type of (float, None) marks a nullable value
SCHEMA: Dict[str, tuple] = {
    "seed": (int, 0),
    "paths.workdir": (str, "aerotrack_run"),

    "synth.n_train": (int, 6),
    "synth.n_train_clutter": (int, 2),
    "synth.n_test": (int, 10),
    "synth.test_uav_present": (bool, True),
    "synth.duration": (float, 20.0),
    "synth.sensors": (list, ["lidar_conic"]),
    "synth.noise_sigma": (float, 0.05),
    "synth.bias_gain": (float, 0.01),
    "synth.clutter_rate": (float, 2.0),
    "synth.dropout_prob": (float, 0.05),
    "synth.scores_n_real": (int, 500),
    "synth.scores_frame_accuracy": (float, 0.6),

    "dynpoints.W": (int, 20),
    "dynpoints.stride": (int, 5),
    "dynpoints.eps": (float, 1.0),
    "dynpoints.min_points": (int, 4),
    "dynpoints.r_pos": (float, 1.0),
    "dynpoints.r_neg": (float, 2.0),
    "dynpoints.dump_windows": (bool, False),

    "seqnet.hidden": (int, 32),
    "seqnet.epochs": (int, 40),
    "seqnet.batch_size": (int, 32),
    "seqnet.lr": (float, 0.01),
    "seqnet.momentum": (float, 0.9),
    "seqnet.uav_weight": ((float, None), None),
    "seqnet.holdout": (float, 0.2),
    "seqnet.threshold": (float, 0.3),
    "seqnet.reg_lr": (float, 0.002),
    "seqnet.p_drop": (float, 0.1),
    "seqnet.p_reverse": (float, 0.5),
    "seqnet.p_rotate": (float, 1.0),

    "centerfix.degree": (int, 3),
    "centerfix.ridge": (float, 1e-6),
    "centerfix.basis": ((list, None), None),

    "detect.gap": (list, []),

    "mot.q": (float, 1.0),
    "mot.r": (float, 0.05),
    "mot.gate": (float, 11.34),
    "mot.cov_kill": (float, 9.0),
    "mot.n_confirm": (int, 2),

    "trajfinish.max_extrap": (float, 3.0),
    "trajfinish.knot_spacing": (float, 1.0),
    "trajfinish.smooth_weight": (float, 1e-2),
    "trajfinish.ridge": (float, 1e-9),

    "seqcls.tau": (float, 0.9),
    "seqcls.k": (int, 5),
    "seqcls.sample_ratio": (float, 0.01),
    "seqcls.adjacency_only": (bool, True),
}


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


def _coerce(key: str, value: Any):
    typ, _ = SCHEMA[key]
    nullable = isinstance(typ, tuple)
    base = typ[0] if nullable else typ
    if value is None:
        if nullable:
            return None
        raise ConfigError(key, "may not be null")
    if base is bool:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected a boolean, got {value!r}")
        return value
    if base is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if base is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if base is str:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    if base is list:
        if not isinstance(value, list):
            raise ConfigError(key, f"expected a list, got {value!r}")
        return value
    raise AssertionError(base)


def _parse_value(key: str, text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        # bare words are accepted as strings
        if text and not any(c in text for c in '[]{}",'):
            return text
        raise ConfigError(key, f"cannot parse value {text!r}") from None


class Config:
    """Validated key/value tree with attribute-free dotted access (``cfg["mot.q"]``)."""

    def __init__(self, values: Optional[Dict[str, Any]] = None):
        self._values = {k: (list(d) if isinstance(d, list) else d) for k, (_, d) in SCHEMA.items()}
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value: Any) -> None:
        if key not in SCHEMA:
            raise ConfigError(key, "unknown configuration key")
        self._values[key] = _coerce(key, value)

    def __getitem__(self, key: str):
        if key not in SCHEMA:
            raise ConfigError(key, "unknown configuration key")
        return self._values[key]

    def section(self, prefix: str) -> Dict[str, Any]:
        p = prefix + "."
        return {k[len(p):]: v for k, v in self._values.items() if k.startswith(p)}

    def as_dict(self) -> Dict[str, Any]:
        return dict(self._values)

    def __eq__(self, other):
        return isinstance(other, Config) and self._values == other._values

    def dumps(self) -> str:
        return "".join(f"{k} = {json.dumps(v)}\n" for k, v in sorted(self._values.items()))

    def apply_overrides(self, overrides: Iterable[str]) -> None:
        for item in overrides:
            if "=" not in item:
                raise ConfigError(item, "override must look like key=value")
            key, text = item.split("=", 1)
            key = key.strip()
            if key not in SCHEMA:
                raise ConfigError(key, "unknown configuration key")
            self.set(key, _parse_value(key, text))

    @classmethod
    def loads(cls, text: str, source: str = "<config>") -> "Config":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip() if not raw.lstrip().startswith("#") else ""
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}", "expected 'key = value'")
            key, val = line.split("=", 1)
            key = key.strip()
            if key not in SCHEMA:
                raise ConfigError(key, f"unknown configuration key ({source}:{lineno})")
            try:
                cfg.set(key, _parse_value(key, val))
            except ConfigError as exc:
                raise ConfigError(key, f"{str(exc)[len(key) + 2:]} ({source}:{lineno})") from None
        return cfg

    @classmethod
    def load(cls, path) -> "Config":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise FileNotFoundError(f"{path}: {exc.strerror or exc}") from None
        return cls.loads(text, str(path))
