"""Numeric tour of the ranking-loss upper bound.

The whole-data criterion loss dominates the enumerated triplet ranking
loss once it is scaled by M * max_u |negatives of u|, where M is the
penalty's doubling factor (2 for linear, 4 for square).  This demo works
one instance by hand, sweeps random instances, and shows why the
exponential penalty is excluded.
"""

import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from critcf.cml import verify_random_instances, verify_upper_bound  # noqa: E402
from critcf.errors import ConfigError  # noqa: E402
from critcf.losses import get_penalty  # noqa: E402


def run():
    print("single user, one observed item (index 0), one unobserved (index 1)")
    scores = np.array([[0.5, 0.8]])
    pos = [np.array([0])]
    upper = np.array([[1.0, 1.0]])
    lower = np.array([[0.5, 0.5]])
    check = verify_upper_bound(scores, pos, upper, lower, get_penalty("square"))
    print("  triplet loss      %.4f   (margin 0.5 + 0.3 squared)" % check.lhs)
    print("  scaled criterion  %.4f   (constant %.0f)" % (check.rhs, check.constant))
    print("  slack             %.4f   holds: %s" % (check.slack, check.holds))

    print("\n200 random instances per penalty:")
    for name in ("linear", "square"):
        checked, failures, min_slack = verify_random_instances(200, get_penalty(name), seed=0)
        print("  %-7s %d/%d held, smallest slack %.3g"
              % (name, checked - failures, checked, min_slack))

    print("\nthe exponential penalty grows too fast for any doubling factor:")
    try:
        verify_upper_bound(scores, pos, upper, lower, get_penalty("expm1"))
    except ConfigError as exc:
        print("  refused: %s" % exc)


if __name__ == "__main__":
    run()
