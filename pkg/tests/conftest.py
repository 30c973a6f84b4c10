# Reduced budgets for every experiment, shared by the experiment, cli and acceptance tests.
SMALL = {
    "exit-set-scan": dict(n=[8, 16], replicas=[40]),
    "connectivity-decay": dict(n=16, distances=[2, 3, 4, 5, 6], replicas=60),
    "isomorphism-suite": dict(n=2, replicas=600),
    "corr-sandwich": dict(n=4, sweeps=200, chains=2, burn_in=20),
    "polyakov-limit": dict(L=16, betas=[16.0], sweeps=[80], chains=2, burn_in=20, radius=2.0),
    "chessboard-tail": dict(L=16, sweeps=80, chains=2, burn_in=20),
    "gm-suite": dict(n=32, replicas=3, xy_replicas=1, xy_sweeps=40, burn_in=10, fk_windows=[16, 32],
                     fk_replicas=2, fk_sweeps=20, trend_n=16, trend_replicas=2),
    "equator-diagnostic": dict(L=[8, 16], sweeps=40, chains=2, burn_in=10),
}

# One line per acceptance criterion, printed in the terminal summary.
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
