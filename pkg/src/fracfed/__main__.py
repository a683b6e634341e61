import sys

from fracfed.cli import main

sys.exit(main())
