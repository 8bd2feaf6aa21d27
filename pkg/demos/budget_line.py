"""Improved stability certificate against the step budget N* = n^(2/(1-alpha)).

For eta_k = c k^-alpha with eta_1 beta L^2 < ln 2 the certificate is
(sqrt(beta) L C / n) sqrt(sum eta_k); it crosses the constant level just after N*.
"""
from sgld_bounds.certificates import stability_certificate
from sgld_bounds.experiments import budget_line, exact_crossing
from sgld_bounds.schedule import StepSchedule

BETA, L, C = 2.0, 1.0, 1.0


def main():
    print(f"{'c':>5} {'alpha':>6} {'n':>4} {'N*':>10} {'crossing':>10} {'cert(N*/2)':>11} {'cert(2N*)':>10} {'level':>7}")
    for c, alpha, n in [(0.05, 0.0, 10), (0.1, 0.25, 8), (0.1, 0.5, 10), (0.3, 0.5, 20)]:
        line = budget_line(c, alpha, n, BETA, L, C)
        n_star = line["N_star"]
        sched = StepSchedule.polynomial(c, alpha, int(2 * n_star))
        half = stability_certificate(L, C, BETA, sched, n, int(n_star / 2)).bound
        double = stability_certificate(L, C, BETA, sched, n, int(2 * n_star)).bound
        cross = exact_crossing(c, alpha, n, BETA, L, C, line["level"], int(2 * n_star))
        print(f"{c:5.2f} {alpha:6.2f} {n:4d} {n_star:10.0f} {cross:10d} {half:11.4f} {double:10.4f} {line['level']:7.4f}")


if __name__ == "__main__":
    main()
