#!/usr/bin/env python3
"""Run the default benchmark campaign: every algorithm/topology cell
over the first 100 usable seeds, writing traces, final points, plot
data, and the convergence summary. Any `gainfield run` flag applies.
"""

import sys

from gainfield.cli import main

if __name__ == "__main__":
    sys.exit(main(["run", *sys.argv[1:]]))
