"""Robust small-signal stability certificates for power systems with uncertain load dynamics."""

from robstab.netmodel import (
    UNCERTAIN,
    Branch,
    Bus,
    BusKind,
    DynamicLoad,
    Generator,
    NetworkCase,
    load_case,
    parse_case,
)

__version__ = "0.1.0"

__all__ = [
    "UNCERTAIN",
    "Branch",
    "Bus",
    "BusKind",
    "DynamicLoad",
    "Generator",
    "NetworkCase",
    "load_case",
    "parse_case",
]
