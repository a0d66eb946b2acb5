import sys

from lesionnet.cli import main

sys.exit(main())
