import sys

from mpclr.cli import main

sys.exit(main())
