import sys

from dbnmix.cli import main

sys.exit(main())
