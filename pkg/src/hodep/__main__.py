import sys

from hodep.cli import main

sys.exit(main())
