import sys

from lqkernel.cli import main

sys.exit(main())
