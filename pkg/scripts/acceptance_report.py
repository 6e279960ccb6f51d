"""Print the acceptance PASS/FAIL lines without pytest (full-size runs, several minutes)."""
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "tests"))

import test_acceptance as A  # noqa: E402

CRITERIA = [
    ("1", A.c1_transforms), ("2", A.c2_phi_theta), ("3", A.c3_flow_consistency),
    ("4a", A.c4a_telescoping), ("4b", A.c4b_gramian), ("4c", A.c4c_parseval),
    ("5", A.c5_time_change), ("6", A.c6_eigenrelation), ("7", A.c7_fokker_planck),
    ("8", A.c8_small_deviation), ("9", A.c9_exp_moments), ("10", A.c10_covariance_scaling),
    ("11", A.c11_density),
]


def main():
    only = set(sys.argv[1:])
    for label, fn in CRITERIA:
        if only and label not in only:
            continue
        t0 = time.perf_counter()
        ok, detail, _ = fn()
        print(f"{'PASS' if ok else 'FAIL'}  criterion {label}: {detail} [{time.perf_counter() - t0:.1f}s]", flush=True)


if __name__ == "__main__":
    main()
