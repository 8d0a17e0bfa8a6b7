"""Sectioned key-value configuration.

Grammar: standard INI (``[section]`` headers, ``key = value`` lines, ``#``
or ``;`` comments).  Keys are unique across sections, so an override may be
written either as ``key=value`` or ``section.key=value``.  Lists are comma
separated; matrices are rows separated by ``;``.  Every key has a default;
an empty file yields the published hyperparameters.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .augment import AugmentConfig
from .data import DEFAULT_DOMAIN_MEANS, DEFAULT_DOMAIN_STDS, SyntheticConfig
from .federation import METHODS, AblationFlags, FederationConfig
from .losses import REDUCTIONS, LossWeights


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key {key!r}: {message}")


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _matrix(text: str) -> tuple[tuple[float, ...], ...]:
    return tuple(tuple(float(v) for v in row.split(",")) for row in text.split(";") if row.strip())


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple) and value and isinstance(value[0], tuple):
        return "; ".join(", ".join(repr(v) for v in row) for row in value)
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class Key:
    section: str
    parse: Callable[[str], Any]
    default: Any


KEYS: dict[str, Key] = {
    # federation
    "method": Key("federation", str, "fedccrl"),
    "clients_per_domain": Key("federation", int, 2),
    "rounds": Key("federation", int, 10),
    "local_epochs": Key("federation", int, 3),
    "batch_size": Key("federation", int, 32),
    "upload_ratio": Key("federation", float, 0.1),
    "lr_init": Key("federation", float, 0.001),
    "global_seed": Key("federation", int, 1),
    # model
    "hidden_sizes": Key("model", _int_list, (64,)),
    "representation_dim": Key("model", int, 32),
    # losses
    "lambda1": Key("losses", float, 0.1),
    "lambda2": Key("losses", float, 1.0),
    "tau": Key("losses", float, 0.1),
    "contrastive_reduction": Key("losses", str, "mean"),
    # augment
    "alpha": Key("augment", float, 0.1),
    "beta": Key("augment", float, 1.0),
    "severity": Key("augment", int, 3),
    "literal_ccdt": Key("augment", _bool, False),
    # ablation
    "ccdt_on": Key("ablation", _bool, True),
    "difp_on": Key("ablation", _bool, True),
    "ra_on": Key("ablation", _bool, True),
    "js_on": Key("ablation", _bool, True),
    # data
    "num_domains": Key("data", int, 4),
    "num_classes": Key("data", int, 5),
    "samples_per_domain": Key("data", int, 200),
    "image_dims": Key("data", _int_list, (3, 8, 8)),
    "class_signal_strength": Key("data", float, 0.4),
    "noise_std": Key("data", float, 1.0),
    "domain_channel_means": Key("data", _matrix, DEFAULT_DOMAIN_MEANS),
    "domain_channel_stds": Key("data", _matrix, DEFAULT_DOMAIN_STDS),
    "data_seed": Key("data", int, 0),
    "image_root": Key("data", str, ""),
}

ALIASES = {
    "r": "upload_ratio",
    "T": "rounds",
    "E": "local_epochs",
    "K": "clients_per_domain",
    "B": "batch_size",
    "lr": "lr_init",
    "seed": "global_seed",
}

SECTIONS = tuple(dict.fromkeys(k.section for k in KEYS.values()))


@dataclass(frozen=True)
class ResolvedConfig:
    federation: FederationConfig
    synthetic: SyntheticConfig
    values: dict
    image_root: str = ""

    def to_text(self) -> str:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        for section in SECTIONS:
            parser[section] = {k: _fmt(self.values[k]) for k, spec in KEYS.items() if spec.section == section}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()


def _canonical(key: str) -> str:
    key = key.strip()
    if "." in key:
        section, name = key.split(".", 1)
        name = ALIASES.get(name, name)
        if name not in KEYS or KEYS[name].section != section:
            raise ConfigError(key, "unknown key")
        return name
    name = ALIASES.get(key, key)
    if name not in KEYS:
        raise ConfigError(key, "unknown key")
    return name


def _assign(values: dict, raw_key: str, text: str) -> None:
    key = _canonical(raw_key)
    try:
        values[key] = KEYS[key].parse(text.strip())
    except ValueError as exc:
        raise ConfigError(raw_key, f"cannot parse {text!r} ({exc})") from None


def parse_overrides(pairs) -> list[tuple[str, str]]:
    """Accept ``"key=value"`` strings or ``(key, value)`` pairs."""
    out = []
    for pair in pairs or ():
        if not isinstance(pair, str):
            k, v = pair
            out.append((str(k), str(v)))
            continue
        if "=" not in pair:
            raise ConfigError(pair, "override must look like key=value")
        k, v = pair.split("=", 1)
        out.append((k.strip(), v))
    return out


def parse_config(path=None, overrides=()) -> ResolvedConfig:
    """Resolve defaults, then the file at ``path``, then ``key=value`` overrides."""
    values = {k: spec.default for k, spec in KEYS.items()}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(str(path), "config file does not exist")
        parser = configparser.ConfigParser()
        parser.optionxform = str
        try:
            parser.read_string(path.read_text())
        except configparser.Error as exc:
            raise ConfigError(str(path), f"malformed config ({exc})") from None
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(section, "unknown section")
            for k, v in parser[section].items():
                _assign(values, f"{section}.{k}", v)
    for k, v in parse_overrides(overrides):
        _assign(values, k, v)
    return build(values)


def build(values: dict) -> ResolvedConfig:
    def guarded(key: str, fn):
        try:
            return fn()
        except (ValueError, TypeError) as exc:
            raise ConfigError(key, str(exc)) from None

    if values["method"] not in METHODS:
        raise ConfigError("method", f"must be one of {METHODS}")
    if values["contrastive_reduction"] not in REDUCTIONS:
        raise ConfigError("contrastive_reduction", f"must be one of {REDUCTIONS}")
    if not 0 < values["upload_ratio"] < 1:
        raise ConfigError("upload_ratio", f"must lie in (0, 1), got {values['upload_ratio']}")
    for key in ("rounds", "local_epochs", "batch_size", "clients_per_domain", "representation_dim"):
        if values[key] < 1:
            raise ConfigError(key, f"must be >= 1, got {values[key]}")
    if len(values["image_dims"]) != 3:
        raise ConfigError("image_dims", "must be C, H, W")

    loss = guarded("tau", lambda: LossWeights(
        values["lambda1"], values["lambda2"], values["tau"], values["contrastive_reduction"]
    ))
    aug = guarded("alpha", lambda: AugmentConfig(
        values["alpha"], values["beta"], values["severity"], values["global_seed"], values["literal_ccdt"]
    ))
    flags = AblationFlags(values["ccdt_on"], values["difp_on"], values["ra_on"], values["js_on"])
    fed = guarded("federation", lambda: FederationConfig(
        clients_per_domain=values["clients_per_domain"],
        rounds=values["rounds"],
        local_epochs=values["local_epochs"],
        batch_size=values["batch_size"],
        upload_ratio=values["upload_ratio"],
        loss=loss,
        augment=aug,
        lr_init=values["lr_init"],
        method=values["method"],
        flags=flags,
        global_seed=values["global_seed"],
        hidden_sizes=tuple(values["hidden_sizes"]),
        representation_dim=values["representation_dim"],
    ))
    syn = SyntheticConfig(
        num_domains=values["num_domains"],
        num_classes=values["num_classes"],
        samples_per_domain=values["samples_per_domain"],
        image_dims=tuple(values["image_dims"]),
        class_signal_strength=values["class_signal_strength"],
        domain_channel_means=values["domain_channel_means"],
        domain_channel_stds=values["domain_channel_stds"],
        noise_std=values["noise_std"],
        seed=values["data_seed"],
    )
    if not values["image_root"]:
        guarded("data", syn.validate)
    return ResolvedConfig(fed, syn, dict(values), values["image_root"])
