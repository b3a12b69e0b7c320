import sys

from mbloc.cli import main

sys.exit(main())
