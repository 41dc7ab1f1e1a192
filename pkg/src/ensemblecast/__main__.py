import sys

from ensemblecast.cli import main

sys.exit(main())
