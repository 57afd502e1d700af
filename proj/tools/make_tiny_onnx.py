"""Regenerates tests/data/tiny_embed.onnx, the 4-dim embedding used by the
pretrained-extractor tests: conv(3->4, stride 2) + ReLU + global average pool."""

import sys

import torch

out = sys.argv[1] if len(sys.argv) > 1 else "tests/data/tiny_embed.onnx"
torch.manual_seed(0)
model = torch.nn.Sequential(
    torch.nn.Conv2d(3, 4, 3, stride=2, padding=1),
    torch.nn.ReLU(),
    torch.nn.AdaptiveAvgPool2d(1),
    torch.nn.Flatten(),
)
model.eval()
torch.onnx.export(model, torch.zeros(1, 3, 32, 32), out, input_names=["input"], output_names=["embedding"],
                  opset_version=11, dynamo=False)
