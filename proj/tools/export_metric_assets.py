#!/usr/bin/env python3
"""Export the pretrained LPIPS and FID networks as TorchScript files for casc.

Writes lpips_alex.pt and inception_fid.pt into --out and prints their SHA-256
digests (paste them into [eval] lpips_sha256 / fid_sha256 to pin them).

Requires: pip install torch torchvision lpips pytorch-fid
"""

import argparse
import hashlib
import pathlib

import torch
from torch import nn


class LpipsAlex(nn.Module):
    # Input: N x 3 x H x W in [-1, 1]. Output: the five AlexNet relu taps.
    def __init__(self):
        super().__init__()
        import lpips

        ref = lpips.LPIPS(net="alex", verbose=False).eval()
        self.register_buffer("shift", ref.scaling_layer.shift.clone())
        self.register_buffer("scale", ref.scaling_layer.scale.clone())
        net = ref.net
        self.slice1, self.slice2, self.slice3 = net.slice1, net.slice2, net.slice3
        self.slice4, self.slice5 = net.slice4, net.slice5
        for i, lin in enumerate([ref.lin0, ref.lin1, ref.lin2, ref.lin3, ref.lin4]):
            w = lin.model[-1].weight.detach().clone()  # 1 x C x 1 x 1
            self.register_buffer(f"lin{i}", w.reshape(1, -1, 1, 1))

    def forward(self, x: torch.Tensor):
        h = (x - self.shift) / self.scale
        h1 = self.slice1(h)
        h2 = self.slice2(h1)
        h3 = self.slice3(h2)
        h4 = self.slice4(h3)
        h5 = self.slice5(h4)
        return [h1, h2, h3, h4, h5]


class InceptionPool(nn.Module):
    # Input: N x 3 x 299 x 299 in [-1, 1]. Output: N x 2048 pool3 features.
    def __init__(self):
        super().__init__()
        from pytorch_fid.inception import InceptionV3

        self.net = InceptionV3(
            [InceptionV3.BLOCK_INDEX_BY_DIM[2048]], resize_input=False, normalize_input=False
        ).eval()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)[0].flatten(1)


def sha256(path: pathlib.Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=pathlib.Path, default=pathlib.Path("assets"))
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    with torch.no_grad():
        lp = torch.jit.script(LpipsAlex().eval())
        lp_path = args.out / "lpips_alex.pt"
        lp.save(str(lp_path))

        fid = torch.jit.trace(InceptionPool().eval(), torch.zeros(1, 3, 299, 299))
        fid_path = args.out / "inception_fid.pt"
        fid.save(str(fid_path))

    print(f"lpips_sha256 = {sha256(lp_path)}")
    print(f"fid_sha256 = {sha256(fid_path)}")
    print(f"export CASC_ASSET_DIR={args.out.resolve()}")


if __name__ == "__main__":
    main()
