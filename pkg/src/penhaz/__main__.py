import sys

from penhaz.cli import main

sys.exit(main())
