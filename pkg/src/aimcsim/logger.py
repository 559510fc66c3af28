# *****************************************************************************
# Copyright 2026 The aimcsim Authors. All rights reserved.
#
# SPDX-License-Identifier: Apache-2.0
#
# *****************************************************************************

import logging
import os

package_logger = logging.getLogger("aimcsim")

if "AIMCSIM_DEBUG" in os.environ:
    package_logger.setLevel(logging.DEBUG)
else:
    package_logger.setLevel(logging.INFO)
