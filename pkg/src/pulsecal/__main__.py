import sys

from pulsecal.harness.cli import main

sys.exit(main())
