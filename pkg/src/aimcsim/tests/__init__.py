#
# Copyright 2026 The aimcsim Authors. All rights reserved.
#
# SPDX-License-Identifier: Apache-2.0
#
import logging
import unittest

from aimcsim.arch_config import ValidatedArch, default_config, require_valid


class SimTestCase(unittest.TestCase):
    """Silences the package logger and hands out the evaluated system."""

    @classmethod
    def setUpClass(cls):
        logging.getLogger("aimcsim").setLevel(logging.WARNING)

    @staticmethod
    def default_arch() -> ValidatedArch:
        return require_valid(default_config())


class TestBaseSetup(SimTestCase):
    def test_bundled_configuration_is_valid(self):
        arch = self.default_arch()
        self.assertEqual(16, arch.n_clusters)
        self.assertEqual(46, arch.eval_cycles)
