# This file is intentionally empty.
# It marks the tests directory as a Python package, allowing for imports between test modules.