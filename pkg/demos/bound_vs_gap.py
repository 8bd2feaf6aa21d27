"""Certificates next to the measured data-averaged gap on the two desk-scale problems."""
from sgld_bounds.certificates import PacBayesConfig, all_certificates
from sgld_bounds.experiments import data_averaged_gap
from sgld_bounds.langevin import SgldConfig
from sgld_bounds.problems import make_problem
from sgld_bounds.schedule import StepSchedule

SETUPS = {
    "quadratic_regression": (2, SgldConfig(5.0, 1.0, 0.5, StepSchedule.constant(0.003, 500), seed=1)),
    "double_well_1d": (1, SgldConfig(2.0, 0.1, 1.0, StepSchedule.constant(0.05, 500), seed=1)),
}


def main():
    for kind, (d, config) in SETUPS.items():
        est = data_averaged_gap(kind, 200, d, config, 200, range(10), test_size=10_000)
        problem = make_problem(kind, 200, d, 0)
        certs = all_certificates(est.grad_sq, config, 200, problem.L, problem.C, PacBayesConfig())
        print(f"{kind}: gap {est.mean_gap:+.5f} +- {est.std_error:.5f}")
        for name, cert in certs.items():
            print(f"    {name:<14} {cert.bound:.5f}")


if __name__ == "__main__":
    main()
