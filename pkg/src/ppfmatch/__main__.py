import sys

from ppfmatch.cli import main

sys.exit(main())
