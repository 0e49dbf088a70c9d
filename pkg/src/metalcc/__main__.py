import sys

from metalcc.cli import main

sys.exit(main())
