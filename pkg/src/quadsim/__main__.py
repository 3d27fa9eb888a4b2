import sys

from quadsim.cli import main

sys.exit(main())
