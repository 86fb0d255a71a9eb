"""Model config files and template shorthands.

A config file holds one ``key=value`` per line (``#`` starts a comment)::

    template=res2net50
    width=26
    scale=4
    cardinality=1
    se=0
    classes=1000

Shorthand names such as ``res2net50-26w4s``, ``res2next29-6c24w4s-se``,
``resnext29-8c64w``, ``mini-4w4s`` or a bare template name are accepted
wherever a config path is, as are files produced by
:meth:`NetworkSpec.to_text`.
"""
from __future__ import annotations

import os
import re

from ..errors import InvalidConfig
from ..res2net import TEMPLATES, NetworkSpec, make_spec

CONFIG_KEYS = ("template", "width", "scale", "cardinality", "se", "classes")
_BOOL = {"0": False, "1": True, "false": False, "true": True, "no": False, "yes": True, "off": False, "on": True}

_SHORTHAND = re.compile(
    r"^(?P<template>resnet50|res2net50|res2next29|resnext29|mini)"
    r"(?:-(?:(?P<c>\d+)c)?(?:(?P<w>\d+)w)?(?:(?P<s>\d+)s)?)?"
    r"(?:-(?P<c2>\d+)c)?(?P<se>-se)?$"
)


def parse_config_text(text: str) -> dict:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise InvalidConfig(f"line {lineno}: unknown key {key!r} (allowed: {', '.join(CONFIG_KEYS)})")
        if key in values:
            raise InvalidConfig(f"line {lineno}: duplicate key {key!r}")
        if key == "template":
            if value not in TEMPLATES:
                raise InvalidConfig(f"line {lineno}: unknown template {value!r}")
            values[key] = value
        elif key == "se":
            if value.lower() not in _BOOL:
                raise InvalidConfig(f"line {lineno}: se must be 0/1, got {value!r}")
            values[key] = _BOOL[value.lower()]
        else:
            try:
                values[key] = int(value)
            except ValueError:
                raise InvalidConfig(f"line {lineno}: {key} must be an integer, got {value!r}") from None
            if values[key] < 1:
                raise InvalidConfig(f"line {lineno}: {key} must be positive")
    if "template" not in values:
        raise InvalidConfig("config has no template= line")
    return values


def spec_from_values(values: dict) -> NetworkSpec:
    return make_spec(values["template"], width=values.get("width"), scale=values.get("scale"),
                     cardinality=values.get("cardinality"), se=values.get("se", False),
                     classes=values.get("classes"))


def parse_shorthand(name: str) -> dict:
    m = _SHORTHAND.match(name.strip().lower())
    if not m:
        raise InvalidConfig(f"{name!r} is neither a config file nor a template name")
    values: dict = {"template": m["template"], "se": bool(m["se"])}
    c = m["c"] or m["c2"]
    for key, v in (("cardinality", c), ("width", m["w"]), ("scale", m["s"])):
        if v is not None:
            values[key] = int(v)
    return values


def load_spec(ref: str, classes: int | None = None) -> NetworkSpec:
    """Resolve a CLI ``<config>`` argument: a file path or a shorthand name."""
    if os.path.exists(ref):
        with open(ref, encoding="utf-8") as fh:
            text = fh.read()
        first = next((ln.split()[0] for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")), "")
        if first == "network":
            spec = NetworkSpec.from_text(text)
            return spec if classes is None else make_spec(**_template_kw(spec, classes))
        values = parse_config_text(text)
    else:
        values = parse_shorthand(ref)
    if classes is not None:
        values["classes"] = classes
    return spec_from_values(values)


def _template_kw(spec: NetworkSpec, classes: int) -> dict:
    args = spec.template_args
    if "template" not in args:
        raise InvalidConfig("network file carries no template to rebuild with a new class count")
    args["se"] = bool(args.get("se"))
    return dict(args, classes=classes)
