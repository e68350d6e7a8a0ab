from recsettle.cli import main
import sys

sys.exit(main())
