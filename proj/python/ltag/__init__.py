# SPDX-License-Identifier: Apache-2.0
# Copyright (C) 2026 The ltag authors

"""Geofencing from passively measured LTE uplink transmissions."""

from ._ltag import (
    ConfigError,
    Dataset,
    FormatError,
    InvalidParameter,
    Model,
    Scenario,
    aoa_sweep,
    bus_round_trip,
    channelize,
    evaluate,
    generate,
    msgtype_sweep,
    power_sweep,
    snr_sweep,
    spearman,
    train,
)

__all__ = [
    "ConfigError",
    "Dataset",
    "FormatError",
    "InvalidParameter",
    "Model",
    "Scenario",
    "aoa_sweep",
    "bus_round_trip",
    "channelize",
    "evaluate",
    "generate",
    "msgtype_sweep",
    "power_sweep",
    "snr_sweep",
    "spearman",
    "train",
]
