import sys

from ign.cli import main

sys.exit(main())
