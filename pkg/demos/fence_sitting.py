"""GD versus SGLD started on the ridge of a symmetric double well.

    python3 demos/fence_sitting.py [replicas]
"""
import sys

from sgld_bounds.experiments import FenceConfig, fence_demo


def main():
    replicas = int(sys.argv[1]) if len(sys.argv) > 1 else 500
    r = fence_demo(FenceConfig(replicas=replicas))
    print(f"SGLD lands in the right well in {r.sgld_right_frequency:.3f} of {replicas} runs "
          f"(+- {3 * r.sgld_frequency_se:.3f} at 3 SE)")
    print(f"GD lands right: base {r.gd_right_frequency:g}, ridge-shifted neighbor {r.gd_variant_right_frequency:g}")
    print(f"stability probe  GD {r.gd_probe:.4f}   SGLD {r.sgld_probe:.4f} +- {r.sgld_probe_se:.4f}")
    print(f"loss gap between the two wells on the probe set: {r.inter_well_loss_gap:.4f}")


if __name__ == "__main__":
    main()
