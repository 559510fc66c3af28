import sys

from aimcsim.cli import main

sys.exit(main())
