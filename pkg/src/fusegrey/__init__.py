"""fusegrey: hybrid fuzzing, symbolic execution and bounded model checking for PIL protocol servers."""

import sys

__version__ = "0.1.0"

# the interpreters and term builders recurse once per nested expression/call
if sys.getrecursionlimit() < 20000:
    sys.setrecursionlimit(20000)
