"""Shared pytest plumbing: the acceptance-criteria summary block.

Each test named ``test_criterion_NN_*`` in test_acceptance.py stands for one
release gate. After the run, one line per criterion is printed so the result
can be scanned without scrolling through the full pytest output.
"""

from __future__ import annotations

import re

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_([a-z0-9_]+)")

_LABELS = {
    1: "repetition DEM edge and class counts",
    2: "matching decoder equals brute-force optimum",
    3: "correlation fitter recovers planted probabilities",
    4: "analytic gradients match finite differences",
    5: "gradient estimator is unbiased",
    6: "trained prior beats fitted and uninformative priors",
    7: "fitted seeding reaches final reward sooner",
    8: "learned parameters extrapolate across round counts",
    9: "coverage checker flags exactly the unbound classes",
    10: "pipeline artifacts identical across thread counts",
}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results: dict[int, tuple[str, float]] = {}
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            if getattr(report, "when", "call") != "call" and status == "passed":
                continue
            match = _CRITERION.search(report.nodeid)
            if not match:
                continue
            num = int(match.group(1))
            verdict = "PASS" if status == "passed" else "FAIL"
            duration = getattr(report, "duration", 0.0)
            # setup/teardown errors count as failures for the criterion
            if num not in results or verdict == "FAIL":
                results[num] = (verdict, duration)
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(results):
        verdict, duration = results[num]
        label = _LABELS.get(num, "criterion")
        line = f"criterion {num:2d} {label:<55s} {verdict} ({duration:.1f}s)"
        terminalreporter.write_line(
            line, green=(verdict == "PASS"), red=(verdict == "FAIL")
        )
