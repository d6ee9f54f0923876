"""Terminal summary: one pass/fail line per acceptance criterion."""

import re

_CRITERION = re.compile(r"test_acceptance\.py::.*test_criterion_(\d+)")
_TITLES = {
    1: "static FLOPs reproduction (4110M / 314M / 569M within 3%)",
    2: "reward identities and worked values within 0.1%",
    3: "reward monotonicity and log-base ranking invariance",
    4: "search matches exhaustive oracle on 256-gene space (19/20 seeds)",
    5: "evolution operator statistics (mutation rate, crossover, elitism)",
    6: "gradient correctness vs finite differences (<1e-4, 10 seeds)",
    7: "random-NEV FLOPs distribution: unimodal, range-shifted",
    8: "end-to-end desk-scale run (meta-train, search, retrain)",
    9: "determinism and interrupt/resume reproducibility",
}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results: dict[int, str] = {}
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            match = _CRITERION.search(report.nodeid)
            if match:
                n = int(match.group(1))
                status = "PASS" if outcome == "passed" else "FAIL"
                if results.get(n) != "FAIL":
                    results[n] = status
    if not results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(
            f"criterion {n}: {results[n]} - {_TITLES.get(n, '')}"
        )
