#!/usr/bin/env python3
"""Audit the final points stored by a finished campaign: second
eigenvalues of the transmit covariances, stationarity residuals, and
the utility gained by polishing each limit point. Any `gainfield
audit` flag applies.
"""

import sys

from gainfield.cli import main

if __name__ == "__main__":
    sys.exit(main(["audit", *sys.argv[1:]]))
