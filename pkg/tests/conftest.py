import sys
import numpy as np
import pytest
import torch
import torch.nn as nn

from ign.data import write_idx
from ign.model import ArchSpec


def digits_idx(path, size: int = 28) -> np.ndarray:
    """Small handwritten-digit corpus in IDX form: the 8x8 scikit-learn digits,
    upsampled to 20x20 and centred on a 28x28 black canvas like MNIST."""
    from PIL import Image
    from sklearn.datasets import load_digits

    d = load_digits().images  # values 0..16
    out = np.zeros((len(d), size, size), np.uint8)
    off = (size - 20) // 2
    for i, im in enumerate(d):
        a = Image.fromarray((im * (255 / 16)).round().astype(np.uint8)).resize((20, 20), Image.BILINEAR)
        out[i, off:off + 20, off:off + 20] = np.asarray(a)
    write_idx(path, out)
    return out


@pytest.fixture(scope="session")
def digits_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("digits") / "digits-28x28.idx"
    digits_idx(path)
    return path


def to_module(arch: ArchSpec, params) -> nn.Sequential:
    """Equivalent torch.nn model carrying the same values (for literal comparisons)."""
    act = {"lrelu": lambda: nn.LeakyReLU(0.2), "relu": nn.ReLU, "tanh": nn.Tanh}
    mods = []
    for i, layer in enumerate(arch.layers):
        if layer.op == "linear":
            m = nn.Linear(layer.in_ch, layer.out_ch)
        elif layer.op == "conv":
            m = nn.Conv2d(layer.in_ch, layer.out_ch, layer.kernel, layer.stride, layer.padding)
        else:
            m = nn.ConvTranspose2d(layer.in_ch, layer.out_ch, layer.kernel, layer.stride, layer.padding)
        with torch.no_grad():
            m.weight.copy_(params[f"{i}.weight"])
            m.bias.copy_(params[f"{i}.bias"])
        mods.append(m)
        if layer.bn:
            bn = nn.BatchNorm2d(layer.out_ch)
            with torch.no_grad():
                bn.weight.copy_(params[f"{i}.bn.weight"])
                bn.bias.copy_(params[f"{i}.bn.bias"])
                bn.running_mean.copy_(params[f"{i}.bn.running_mean"])
                bn.running_var.copy_(params[f"{i}.bn.running_var"])
            mods.append(bn)
        if layer.act:
            mods.append(act[layer.act]())
    return nn.Sequential(*mods)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
