from treespin.cli import main
import sys
sys.exit(main())
