import sys

from fairbound.cli import main

sys.exit(main())
