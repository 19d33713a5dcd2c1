import sys

from aggrogame.cli import main

sys.exit(main())
