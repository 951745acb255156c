import sys

from pycredible.Cli import main

sys.exit(main())
