"""Python access to the tcfbsde solver library."""

import json
from typing import Any, Mapping

from . import _core
from ._core import (
    CONFIG_SCHEMA,
    TcfbsdeError,
    cash_adjoint_path,
    fnv1a_hex,
    inverse_path,
    laplace_exponent,
    model_names,
)

__all__ = [
    "CONFIG_SCHEMA",
    "TcfbsdeError",
    "cash_adjoint_path",
    "cash_demo",
    "fnv1a_hex",
    "inverse_path",
    "laplace_exponent",
    "model_names",
    "normalize_config",
    "simulate",
    "verify",
]


def _dump(config: Mapping[str, Any]) -> str:
    doc = dict(config)
    doc.setdefault("schema", CONFIG_SCHEMA)
    return json.dumps(doc)


def normalize_config(config: Mapping[str, Any]) -> dict:
    """Validate a configuration and return it with defaults filled in."""
    return json.loads(_core.normalize_config(_dump(config)))


def simulate(config: Mapping[str, Any]) -> dict:
    """Write path data and a manifest to config["output"]."""
    return _core.simulate(_dump(config))


def verify(config: Mapping[str, Any]) -> tuple[int, dict]:
    """Run the selected checks; returns (exit status, report)."""
    status, report = _core.verify(_dump(config))
    return status, json.loads(report)


def cash_demo(config: Mapping[str, Any]) -> dict:
    """Certify the cash-management optimum and return the report."""
    return json.loads(_core.cash_demo(_dump(config)))
