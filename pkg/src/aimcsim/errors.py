# *****************************************************************************
# Copyright 2026 The aimcsim Authors. All rights reserved.
#
# SPDX-License-Identifier: Apache-2.0
#
# *****************************************************************************

"""
Exceptions raised by the simulator.

Everything derives from AimcSimError so the command line front end can map
model failures to exit code 1 with a single except clause.
"""

from typing import Iterable, List


class AimcSimError(Exception):
    pass


class ConfigError(AimcSimError):
    """The hardware description is malformed or violates an invariant."""

    def __init__(self, violations: Iterable[str]) -> None:
        self.violations: List[str] = list(violations)
        super().__init__("; ".join(self.violations))


class DimensionError(AimcSimError):
    """A job or a tile does not fit the crossbar or the L1 budget."""


class MappingError(AimcSimError):
    pass


class SchedulingError(AimcSimError):
    pass


class WatchdogError(AimcSimError):
    """The event-count cap was exceeded, which signals a livelocked model."""


class DeadlockError(AimcSimError):
    """The event queue drained while some waits can never be satisfied."""

    def __init__(self, blocked: Iterable[str]) -> None:
        self.blocked: List[str] = list(blocked)
        super().__init__("simulation drained with blocked waits: " + ", ".join(self.blocked))


class InterconnectError(AimcSimError):
    pass


class SweepError(AimcSimError):
    pass
