#!/usr/bin/env python3
"""Compare the scaling variants (plain, s1, s1s2) on one seeded mesh
instance with link delay 1 and emit the utility-overlay CSV. Any
`gainfield speedups` flag applies.
"""

import sys

from gainfield.cli import main

if __name__ == "__main__":
    sys.exit(main(["speedups", *sys.argv[1:]]))
