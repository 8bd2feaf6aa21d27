"""Run every grid check at its default setup and print the verdicts."""
import time

from sgld_bounds.density_lab import CHECKS, LabSetup, lab_verify


def main():
    for check in CHECKS:
        start = time.perf_counter()
        report = lab_verify(check, LabSetup())
        verdict = "PASS" if report.passed else "FAIL"
        print(f"{verdict} {check:<24} steps={report.measured.size:<4} worst margin {report.worst_margin():+.3e}"
              f"  ({time.perf_counter() - start:.1f}s)")


if __name__ == "__main__":
    main()
