import pytest

from vologan.gradcheck import CASES, TOLERANCE, run_case


def test_registry_covers_every_kind():
    kinds = {c.kind for c in CASES}
    assert kinds == {"op", "layer", "loss", "model"}
    names = {c.name for c in CASES}
    for required in ("instance_norm", "spectral_conv", "gated_self_attention", "upsample", "hard_sigmoid",
                     "adv_discriminator", "adv_generator", "pixel_mae", "pixel_mse", "ssim",
                     "ssim_loss_channelwise", "total_generator", "total_discriminator"):
        assert required in names


@pytest.mark.parametrize("case", CASES, ids=lambda c: c.name)
def test_gradient_matches_finite_differences(case):
    assert run_case(case) < TOLERANCE
