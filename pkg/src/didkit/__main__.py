import sys

from didkit.cli import main

sys.exit(main())
