# *****************************************************************************
# Copyright 2026 The aimcsim Authors. All rights reserved.
#
# SPDX-License-Identifier: Apache-2.0
#
# *****************************************************************************

"""Discrete-event simulator of many-cluster analog in-memory computing systems."""

__version__ = "1.0.0"
