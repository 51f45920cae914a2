"""
Checking the gradients of the full model
========================================

Central differences on a tiny encoder (d=8, one layer, two heads) against
the tape-based backward pass, for both training objectives.
"""

import time

from cuimlm.gradcheck import TOLERANCE, run_gradcheck

start = time.perf_counter()
for result in run_gradcheck(seed=1):
    name, index, analytic, numeric = result.worst
    print(f"{result.mode.value:>8}: {result.checked} entries, max relative error "
          f"{result.max_rel_error:.2e} at {name}[{index}] ({analytic:.6e} vs {numeric:.6e})  passed={result.passed}")
print(f"tolerance {TOLERANCE:g}, took {time.perf_counter() - start:.1f}s")
