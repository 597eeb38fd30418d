import sys

from precdca.cli import main

sys.exit(main())
