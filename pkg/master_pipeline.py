# master_pipeline.py

import sys
from pathlib import Path

# Add src to path so we can import the package without installing it
sys.path.append(str(Path(__file__).parent / "src"))

from litho_sampler.cli import main

if __name__ == "__main__":
    sys.exit(main())
