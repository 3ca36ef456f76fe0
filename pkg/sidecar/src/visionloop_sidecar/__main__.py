import sys

from .interpreter import main

sys.exit(main())
