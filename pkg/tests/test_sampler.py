import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from ign.engine import ParamSet, forward
from ign.model import build_dcgan_ae, build_identity, build_mlp, init_params
from ign.sampler import (
    GUTTER, DegradationSpec, apply_n, combine_latents, composite, default_blur_sigma, degrade, gaussian_kernel1d,
    grayscale, interpolate, latent_arithmetic, project, render_sheet, save_sheet, sheet_name, sketch,
    write_generation_sheets,
)


@pytest.fixture(scope="module")
def img_model():
    arch = build_dcgan_ae(1, 32, 8, width=4)
    return arch, init_params(arch, seed=0)


@pytest.fixture(scope="module")
def vec_model():
    arch = build_mlp(2, 16, 3)
    return arch, init_params(arch, seed=0, std="fan_in")


def _images(b=2, c=3, h=32, w=32, seed=0):
    return torch.rand(b, c, h, w, generator=torch.Generator().manual_seed(seed)) * 2 - 1


# -- sequential application -------------------------------------------------


def test_apply_n_identity_and_single_forward(img_model):
    x = torch.randn(3, 2)
    assert all(torch.equal(y, x) for y in apply_n(ParamSet({}), build_identity((2,)), x, 4))
    arch, p = img_model
    z = torch.randn(2, 1, 32, 32)
    assert torch.equal(apply_n(p, arch, z, 1)[0], forward(p, arch, z))
    with pytest.raises(ValueError):
        apply_n(p, arch, z, 0)


def test_apply_n_composition(img_model):
    arch, p = img_model
    seq = apply_n(p, arch, torch.randn(3, 1, 32, 32), 4)
    for k in range(1, 4):
        assert torch.equal(seq[k], apply_n(p, arch, seq[k - 1], 1)[0])
    assert all(y.abs().max() <= 1 for y in seq)  # tanh head


def test_apply_n_does_not_touch_params(img_model):
    arch, p = img_model
    before = p.clone()
    apply_n(p, arch, torch.randn(4, 1, 32, 32), 2)
    assert p == before


# -- interpolation and arithmetic -------------------------------------------


def test_interpolation_layout_and_endpoints(img_model):
    arch, p = img_model
    z0, z1 = torch.randn(1, 32, 32), torch.randn(1, 32, 32)
    rows = interpolate(p, arch, z0, z1, 5)
    assert len(rows) == 5 and all(len(r) == 4 for r in rows)
    for row, z in ((rows[0], z0), (rows[-1], z1)):
        assert torch.equal(row[0][0], z)
        for got, want in zip(row[1:], apply_n(p, arch, z.unsqueeze(0), 3)):
            torch.testing.assert_close(got, want, rtol=0, atol=1e-6)
    torch.testing.assert_close(rows[2][0][0], (z0 + z1) / 2, rtol=0, atol=1e-7)
    sheet = render_sheet(rows)
    assert sheet.shape == (5 * 32 + 6 * GUTTER, 4 * 32 + 5 * GUTTER)


def test_interpolation_preconditions(img_model):
    arch, p = img_model
    with pytest.raises(ValueError):
        interpolate(p, arch, torch.randn(1, 32, 32), torch.randn(1, 32, 32), 1)
    with pytest.raises(ValueError):
        interpolate(p, arch, torch.randn(1, 32, 32), torch.randn(1, 16, 16), 3)


def test_arithmetic_examples(vec_model):
    arch, p = vec_model
    g = torch.Generator().manual_seed(1)
    a, b, z = (torch.randn(5, 2, generator=g) for _ in range(3))
    assert torch.equal(latent_arithmetic(p, arch, a, a, z), forward(p, arch, z))
    zero = torch.zeros_like(z)
    assert torch.equal(latent_arithmetic(p, arch, a, zero, zero), forward(p, arch, a))
    assert torch.equal(latent_arithmetic(p, arch, a, b, z), forward(p, arch, (a - b) + z))


def test_arithmetic_mean_variant():
    pos, neg, z = torch.randn(4, 3), torch.randn(6, 3), torch.randn(1, 3)
    out = combine_latents(pos, neg, z, reduce="mean")
    torch.testing.assert_close(out, pos.mean(0) - neg.mean(0) + z)
    with pytest.raises(ValueError):
        combine_latents(pos, neg, z)
    with pytest.raises(ValueError):
        combine_latents(pos, neg, z, reduce="median")


# -- degradations -----------------------------------------------------------


def _sketch_oracle(x: np.ndarray, kernel: int) -> np.ndarray:
    """Direct 2-D evaluation: explicit outer-product kernel, mirrored borders, no separability."""
    sigma = 0.3 * ((kernel - 1) * 0.5 - 1) + 0.8
    r = kernel // 2
    t = np.arange(-r, r + 1, dtype=np.float64)
    k1 = np.exp(-t ** 2 / (2 * sigma ** 2))
    k2 = np.outer(k1, k1) / k1.sum() ** 2
    out = np.empty_like(x, dtype=np.float64)
    for b in range(x.shape[0]):
        y = (x[b].astype(np.float64) + 1).mean(0)
        yp = np.pad(y, r, mode="reflect")
        h, w = y.shape
        blur = np.zeros_like(y)
        for i in range(kernel):
            for j in range(kernel):
                blur += k2[i, j] * yp[i:i + h, j:j + w]
        out[b] = y / (blur + 1e-10) - 1
    return out


def test_sketch_sigma():
    assert default_blur_sigma(21) == pytest.approx(3.5, abs=1e-12)
    assert DegradationSpec("sketch").blur_sigma == pytest.approx(3.5, abs=1e-12)
    k = gaussian_kernel1d(21, 3.5)
    assert k.sum().item() == pytest.approx(1.0, abs=1e-12) and torch.equal(k, k.flip(0))


@pytest.mark.parametrize("kernel", [5, 21])
def test_sketch_matches_direct_evaluation(kernel):
    x = _images(2, 3, 24, 28)
    got = sketch(x.double(), kernel).numpy()
    np.testing.assert_allclose(got, _sketch_oracle(x.numpy(), kernel), rtol=0, atol=1e-9)
    assert np.allclose(got[:, 0], got[:, 1]) and np.allclose(got[:, 0], got[:, 2])


def test_sketch_of_flat_image_is_zero_up_to_eps():
    out = sketch(torch.full((1, 3, 32, 32), 0.3, dtype=torch.float64), 21)
    torch.testing.assert_close(out, torch.full_like(out, 1.3 / (1.3 + 1e-10) - 1), rtol=0, atol=1e-15)


def test_grayscale_is_identity_on_gray_images():
    g = _images(3, 1).expand(3, 3, 32, 32).contiguous()
    assert torch.equal(degrade(g, DegradationSpec("grayscale")), g)
    x = _images()
    torch.testing.assert_close(grayscale(x)[:, 1], x.mean(1))


def test_noise_statistics_and_determinism():
    x = torch.zeros(1, 1, 1000, 1000)
    spec = DegradationSpec("noise", sigma=0.15)
    d = degrade(x, spec, seed=3)
    assert abs(d.std().item() / 0.15 - 1) < 0.02
    assert torch.equal(d, degrade(x, spec, seed=3))
    assert not torch.equal(d, degrade(x, spec, seed=4))


def test_mask_noise_touches_only_the_rectangle():
    x = _images(2, 3, 16, 16)
    d = degrade(x, DegradationSpec("mask_noise", sigma=0.5, rect=(2, 3, 4, 5)), seed=0)
    changed = (d != x).any(0).any(0)
    assert changed[2:6, 3:8].all() and changed.sum() == 20
    restored = composite(x, d, (2, 3, 4, 5))
    assert torch.equal(restored, d)
    assert torch.equal(composite(d, x, (2, 3, 4, 5)), x)


@pytest.mark.parametrize(
    "kw",
    [dict(kind="sketch", kernel=20), dict(kind="sketch", kernel=1), dict(kind="noise", sigma=-0.1),
     dict(kind="mask_noise"), dict(kind="blur")],
)
def test_degradation_spec_validation(kw):
    with pytest.raises(ValueError):
        DegradationSpec(**kw)


def test_mask_out_of_bounds_and_bad_rank():
    spec = DegradationSpec("mask_noise", rect=(10, 10, 8, 8))
    with pytest.raises(ValueError, match="exceeds"):
        degrade(_images(1, 1, 16, 16), spec)
    with pytest.raises(ValueError):
        degrade(torch.zeros(3, 16, 16), DegradationSpec("noise"))


def test_project_is_apply_n_on_the_degraded_input(img_model):
    arch, p = img_model
    d = degrade(_images(2, 1), DegradationSpec("noise"), seed=0)
    assert torch.equal(project(p, arch, d, 1)[0], forward(p, arch, d))
    assert all(y.abs().max() <= 1 for y in project(p, arch, d, 3))


# -- sheets -----------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.sampled_from([1, 3]), st.integers(2, 9))
def test_sheet_geometry_and_gutters(nrow, ncol, c, size):
    rows = [[torch.full((c, size, size), -1.0) for _ in range(ncol)] for _ in range(nrow)]
    sheet = render_sheet(rows)
    H, W = nrow * size + (nrow + 1) * GUTTER, ncol * size + (ncol + 1) * GUTTER
    assert sheet.shape == ((H, W) if c == 1 else (H, W, 3)) and sheet.dtype == np.uint8
    assert (sheet[:GUTTER] == 255).all() and (sheet[:, :GUTTER] == 255).all()
    assert (sheet[GUTTER:GUTTER + size, GUTTER:GUTTER + size] == 0).all()
    # white pixels are exactly the gutters
    assert (sheet == 255).sum() == (H * W - nrow * ncol * size * size) * (1 if c == 1 else 3)


def test_sheet_rejects_nan():
    img = torch.zeros(1, 4, 4)
    img[0, 1, 1] = float("nan")
    with pytest.raises(ValueError, match="non-finite"):
        render_sheet([[img]])


def test_sheet_is_lossless(tmp_path):
    rows = [[_images(1, 3, 8, 8)[0]]]
    path = save_sheet(rows, tmp_path / sheet_name("project", 3, 2, "noise0.15"))
    assert path.name == "project_noise0.15_seed3_n2.png"
    assert np.array_equal(np.asarray(Image.open(path)), render_sheet(rows))


def test_generation_sheets_deterministic(tmp_path, img_model, vec_model):
    arch, p = img_model
    a = write_generation_sheets(p, arch, tmp_path / "a", count=5, n=2, seed=4)
    b = write_generation_sheets(p, arch, tmp_path / "b", count=5, n=2, seed=4)
    assert [x.name for x in a] == ["generate_seed4_n2_f1.png", "generate_seed4_n2_f2.png"]
    assert all(x.read_bytes() == y.read_bytes() for x, y in zip(a, b))
    varch, vp = vec_model
    (tsv,) = write_generation_sheets(vp, varch, tmp_path / "v", count=7, n=3, seed=0)
    lines = tsv.read_text().splitlines()
    assert lines[0].split("\t")[:3] == ["f0_d0", "f0_d1", "f1_d0"] and len(lines) == 8
