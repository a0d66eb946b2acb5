"""Parameter count and CPU forward time of every Lesion-Net variant."""

import argparse
import time

import torch

from lesionnet.helpers.run_config import VARIANTS, BackboneConfig, LesionNetConfig
from lesionnet.models.backbone import param_count
from lesionnet.models.lesion_net import build_lesion_net


def time_forward(net, side: int, iterations: int) -> float:
    x = torch.rand(1, 3, side, side)
    net.eval()
    with torch.no_grad():
        net(x)  # warm-up
        start = time.perf_counter()
        for _ in range(iterations):
            net(x)
    return (time.perf_counter() - start) / iterations


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--side", type=int, default=128)
    parser.add_argument("--iterations", type=int, default=10)
    parser.add_argument("--backbone", default="reference", choices=("reference", "resnet18", "resnet50"))
    args = parser.parse_args()

    torch.manual_seed(0)
    print(f"{'variant':>8} {'params':>12} {'ms/forward':>12}")
    for variant in sorted(VARIANTS, reverse=True):
        net = build_lesion_net(LesionNetConfig(variant=variant, backbone=BackboneConfig(kind=args.backbone)))
        ms = 1000.0 * time_forward(net, args.side, args.iterations)
        print(f"{variant:>7}s {param_count(net):>12,d} {ms:>12.2f}")


if __name__ == "__main__":
    main()
