import sys

from polarbev.harness.cli import main

sys.exit(main())
