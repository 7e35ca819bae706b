from nlwg.cli import main
import sys

sys.exit(main())
