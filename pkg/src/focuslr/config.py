"""TOML run configuration: strict schema, defaults, and the resolved-config
echo written next to every run's outputs.

A config has six sections: data, model, loss, optimizer, training, output.
Unknown sections or keys are rejected by name, so a typo ("variannt")
fails loudly instead of silently training with a default.  The resolved
echo materializes every default; reloading it reproduces the run exactly.
"""

import os
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .errors import ConfigError
from .losses import LossConfig
from .model import make_optimizer

__all__ = ["RunConfig", "load_config", "loads_config", "dump_toml", "OUTPUT_ROOT_ENV"]

OUTPUT_ROOT_ENV = "FOCUSLR_OUTPUT_ROOT"

GENERATORS = ("blobs", "retrieval", "sparse_multilabel", "file")
TASKS = ("classify", "retrieve", "multilabel")

# per-section key schema: name -> (type, default); REQUIRED means no default
REQUIRED = object()

_DATA_COMMON = {"generator": (str, REQUIRED), "standardize": (bool, True)}
_DATA_KEYS = {
    "blobs": {"k": (int, 100), "dim": (int, 32), "n_per_class": (int, 30),
              "separation": (float, 6.0), "test_fraction": (float, 0.3),
              "seed_offset": (int, 0)},
    "retrieval": {"k_train": (int, 60), "k_test": (int, 40), "dim": (int, 32),
                  "n_per_class": (int, 4), "separation": (float, 6.0),
                  "seed_offset": (int, 0)},
    "sparse_multilabel": {"k": (int, 200), "n": (int, 4000), "avg_positives": (float, 3.0),
                          "imbalance_ratio": (float, 50.0), "dim": (int, 32),
                          "noise_scale": (float, 0.5), "test_fraction": (float, 0.3),
                          "seed_offset": (int, 0)},
    "file": {"task": (str, REQUIRED), "path": (str, ""), "path_gallery": (str, ""),
             "path_query": (str, ""), "k": (int, 0), "test_fraction": (float, 0.3)},
}
_MODEL_KEYS = {"hidden": (list, [64])}
_LOSS_KEYS = {"variant": (str, REQUIRED), "m": (float, 25.0), "beta": (float, 10.0),
              "r": (float, 2.0), "detach_weight": (bool, False)}
_OPT_KEYS = {
    "sgd": {"kind": (str, "sgd"), "lr": (float, 0.1), "momentum": (float, 0.9),
            "weight_decay": (float, 1e-4)},
    "adam": {"kind": (str, "adam"), "lr": (float, 0.0003), "beta1": (float, 0.9),
             "beta2": (float, 0.999), "eps": (float, 1e-8), "weight_decay": (float, 1e-4)},
}
_TRAIN_KEYS = {"epochs": (int, REQUIRED), "batch_size": (int, 32), "seed": (int, 0),
               "lr_decay_epoch": (int, -1), "lr_decay_factor": (float, 0.1)}
_OUTPUT_KEYS = {"dir": (str, "runs"), "trace_stride": (int, 1)}

_SECTIONS = ("data", "model", "loss", "optimizer", "training", "output")


def _coerce(section, key, typ, value):
    where = f"{section}.{key}"
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    if typ is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if typ is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if typ is list:
        if not isinstance(value, list) or not all(
                isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{where}: expected a list of integers, got {value!r}")
        return [int(v) for v in value]
    raise AssertionError(typ)


def _apply_schema(section, raw, schema):
    unknown = set(raw) - set(schema)
    if unknown:
        raise ConfigError(f"unknown key {section}.{sorted(unknown)[0]}")
    out = {}
    for key, (typ, default) in schema.items():
        if key in raw:
            out[key] = _coerce(section, key, typ, raw[key])
        elif default is REQUIRED:
            raise ConfigError(f"missing required key {section}.{key}")
        else:
            out[key] = default.copy() if isinstance(default, list) else default
    return out


@dataclass
class RunConfig:
    data: dict
    model: dict
    loss: dict
    optimizer: dict
    training: dict
    output: dict

    @property
    def task(self):
        gen = self.data["generator"]
        if gen == "blobs":
            return "classify"
        if gen == "retrieval":
            return "retrieve"
        if gen == "sparse_multilabel":
            return "multilabel"
        return self.data["task"]

    def loss_cfg(self):
        return LossConfig(variant=self.loss["variant"], m=self.loss["m"],
                          beta=self.loss["beta"], r=self.loss["r"],
                          detach_weight=self.loss["detach_weight"])

    def make_optimizer(self):
        kwargs = {k: v for k, v in self.optimizer.items() if k != "kind"}
        return make_optimizer(self.optimizer["kind"], **kwargs)

    def output_dir(self):
        """Configured output directory, relative paths nested under the
        FOCUSLR_OUTPUT_ROOT environment variable when it is set."""
        path = self.output["dir"]
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not os.path.isabs(path):
            return os.path.join(root, path)
        return path

    def resolved(self):
        return {
            "data": dict(self.data),
            "model": dict(self.model),
            "loss": dict(self.loss),
            "optimizer": dict(self.optimizer),
            "training": dict(self.training),
            "output": dict(self.output),
        }


def _validate(raw, origin):
    if not isinstance(raw, dict):
        raise ConfigError(f"{origin}: config root must be a table")
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section [{sorted(unknown)[0]}]")
    for section in _SECTIONS:
        if section not in raw:
            raise ConfigError(f"missing section [{section}]")
        if not isinstance(raw[section], dict):
            raise ConfigError(f"[{section}] must be a table")

    gen = raw["data"].get("generator")
    if gen not in GENERATORS:
        raise ConfigError(f"data.generator must be one of {GENERATORS}, got {gen!r}")
    data = _apply_schema("data", raw["data"], {**_DATA_COMMON, **_DATA_KEYS[gen]})
    if gen == "file":
        if data["task"] not in TASKS:
            raise ConfigError(f"data.task must be one of {TASKS}, got {data['task']!r}")
        if data["task"] == "retrieve":
            if not (data["path_gallery"] and data["path_query"] and data["path"]):
                raise ConfigError("data: retrieve task needs path, path_gallery, and path_query")
        elif not data["path"]:
            raise ConfigError("missing required key data.path")

    model = _apply_schema("model", raw["model"], _MODEL_KEYS)
    if any(h < 1 for h in model["hidden"]):
        raise ConfigError(f"model.hidden dims must be positive, got {model['hidden']}")

    loss = _apply_schema("loss", raw["loss"], _LOSS_KEYS)

    kind = raw["optimizer"].get("kind", "sgd")
    if kind not in _OPT_KEYS:
        raise ConfigError(f"optimizer.kind must be one of {tuple(_OPT_KEYS)}, got {kind!r}")
    optimizer = _apply_schema("optimizer", raw["optimizer"], _OPT_KEYS[kind])

    training = _apply_schema("training", raw["training"], _TRAIN_KEYS)
    output = _apply_schema("output", raw["output"], _OUTPUT_KEYS)

    cfg = RunConfig(data=data, model=model, loss=loss, optimizer=optimizer,
                    training=training, output=output)
    # fail fast on invalid loss/optimizer values, mapped to config errors
    try:
        cfg.loss_cfg()
    except Exception as exc:
        raise ConfigError(f"loss: {exc}") from None
    try:
        cfg.make_optimizer()
    except Exception as exc:
        raise ConfigError(f"optimizer: {exc}") from None
    return cfg


def loads_config(text, origin="<string>"):
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{origin}: {exc}") from None
    return _validate(raw, origin)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return loads_config(fh.read(), origin=str(path))


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return repr(v)
    if isinstance(v, float):
        # repr round-trips; TOML requires a dot or exponent, which repr
        # always produces for floats
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize {type(v).__name__} to TOML")


def dump_toml(resolved, path):
    """Write a resolved config (nested dict) as TOML, fixed section and key
    order, so identical configs produce identical bytes."""
    lines = []
    for section in _SECTIONS:
        lines.append(f"[{section}]")
        for key, value in resolved[section].items():
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
    return path
