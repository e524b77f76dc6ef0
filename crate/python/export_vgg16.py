"""Write the VGG16 trunk (through relu3_3) used by the perceptual loss.

    python python/export_vgg16.py weights/vgg16_relu3_3.safetensors

Point `perceptual_weights` in the training config at the output file.
Needs torchvision and network access to fetch the ImageNet weights once.
"""

import sys

import torch
from safetensors.torch import save_file
from torchvision.models import VGG16_Weights, vgg16

CONV_LAYERS = (0, 2, 5, 7, 10, 12, 14)


def main() -> None:
    if len(sys.argv) != 2:
        sys.exit(f"usage: {sys.argv[0]} OUTPUT.safetensors")
    model = vgg16(weights=VGG16_Weights.IMAGENET1K_V1).eval()
    state = model.state_dict()
    tensors = {}
    for i in CONV_LAYERS:
        for part in ("weight", "bias"):
            key = f"features.{i}.{part}"
            tensors[key] = state[key].to(torch.float32).contiguous()
    save_file(tensors, sys.argv[1])
    print(f"wrote {len(tensors)} tensors to {sys.argv[1]}")


if __name__ == "__main__":
    main()
