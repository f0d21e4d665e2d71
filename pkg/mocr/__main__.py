import sys

from mocr.main import main

sys.exit(main())
