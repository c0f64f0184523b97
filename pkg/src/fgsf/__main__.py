import sys

from fgsf.harness.cli import main

sys.exit(main())
