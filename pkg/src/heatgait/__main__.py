import sys

from heatgait.cli import main

sys.exit(main())
