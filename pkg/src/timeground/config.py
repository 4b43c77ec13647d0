"""Run configuration from TOML or JSON files.

Recognised tables: ``scaling``, ``grounding``, ``templates``, ``backend``,
``datagen`` and ``perturb``. Unknown keys are rejected.
"""

from __future__ import annotations

import json
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any, Optional

from .backend.base import Decoding
from .orchestrator import GroundingConfig
from .scaling import ScalingConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SECTIONS = {"scaling", "grounding", "templates", "backend", "datagen", "perturb"}


def load_config(path: Optional[str]) -> dict[str, dict[str, Any]]:
    if path is None:
        return {}
    p = Path(path)
    if p.suffix.lower() == ".toml":
        with open(p, "rb") as fh:
            data = tomllib.load(fh)
    else:
        data = json.loads(p.read_text(encoding="utf-8"))
    unknown = set(data) - SECTIONS
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    return data


def _pick(cls, values: dict, section: str) -> dict:
    names = {f.name for f in fields(cls)}
    bad = set(values) - names
    if bad:
        raise ValueError(f"unknown keys in [{section}]: {sorted(bad)}")
    return values


def grounding_config(cfg: dict) -> GroundingConfig:
    scaling = ScalingConfig(**_pick(ScalingConfig, cfg.get("scaling", {}), "scaling"))
    g = dict(cfg.get("grounding", {}))
    decoding = Decoding(**_pick(Decoding, g.pop("decoding", {}), "grounding.decoding"))
    tmpl = cfg.get("templates", {})
    allowed = {"system_text", "fine_task", "coarse_task"}
    if set(tmpl) - allowed:
        raise ValueError(f"unknown keys in [templates]: {sorted(set(tmpl) - allowed)}")
    kwargs = _pick(GroundingConfig, {**g, **tmpl}, "grounding")
    return GroundingConfig(scaling=scaling, decoding=decoding, **kwargs)
