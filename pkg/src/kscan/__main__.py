import sys

from kscan.cli import main

sys.exit(main())
