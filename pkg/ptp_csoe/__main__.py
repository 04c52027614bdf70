import sys
from ptp_csoe.cli import main

sys.exit(main())
