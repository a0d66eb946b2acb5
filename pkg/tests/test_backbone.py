import pytest
import torch
import torch.nn as nn

from conftest import tiny_backbone
from lesionnet.core_types import ConfigError, ShapeError
from lesionnet.helpers.run_config import BackboneConfig
from lesionnet.models.backbone import backbone_forward, build_backbone, param_count
from lesionnet.models.lesion_net import upsample


def test_default_pyramid_on_128():
    config = BackboneConfig()
    pyramid = backbone_forward(torch.rand(1, 3, 128, 128), build_backbone(config))
    assert [p.shape[-1] for p in pyramid] == [64, 32, 16, 8, 4]
    assert [p.shape[1] for p in pyramid] == list(config.stage_channels)
    assert pyramid[-1].shape[1] == config.final_channels == 256


def test_single_image_gives_unbatched_stages():
    pyramid = backbone_forward(torch.rand(3, 64, 64), tiny_backbone())
    assert pyramid[0].shape == (2, 32, 32)
    assert pyramid[-1].shape == (5, 2, 2)


def test_full_size_input_reaches_28():
    backbone = build_backbone(tiny_backbone())
    with torch.no_grad():
        pyramid = backbone_forward(torch.rand(1, 3, 896, 896), backbone)
    assert pyramid[-1].shape[-2:] == (28, 28)


@pytest.mark.parametrize("side", [100, 48, 0])
def test_side_must_be_multiple_of_32(side):
    with pytest.raises(ShapeError):
        backbone_forward(torch.rand(1, 3, side, side), tiny_backbone())


@pytest.mark.parametrize("side", [32, 64, 128, 256])
def test_stride_contract(side):
    pyramid = backbone_forward(torch.rand(2, 3, side, side), build_backbone(tiny_backbone()))
    assert [p.shape[-1] for p in pyramid] == [side // 2 ** (i + 1) for i in range(5)]


def test_resnet18_honours_the_same_contract():
    config = BackboneConfig(kind="resnet18")
    with torch.no_grad():
        pyramid = backbone_forward(torch.rand(1, 3, 64, 64), build_backbone(config))
    assert [p.shape[-1] for p in pyramid] == [32, 16, 8, 4, 2]
    assert [p.shape[1] for p in pyramid] == list(config.channels)


def test_resnet50_final_width_is_2048():
    assert BackboneConfig(kind="resnet50").final_channels == 2048


def test_backbone_config_validation():
    with pytest.raises(ConfigError):
        BackboneConfig(stage_channels=(8, 16, 32, 64))
    with pytest.raises(ConfigError):
        BackboneConfig(stage_channels=(8, 16, 0, 64, 128))
    with pytest.raises(ConfigError):
        BackboneConfig(kind="inception")


def test_norm_is_opt_in():
    plain = build_backbone(tiny_backbone())
    normed = build_backbone(tiny_backbone(norm=True))
    assert not any(isinstance(m, nn.BatchNorm2d) for m in plain.modules())
    assert any(isinstance(m, nn.BatchNorm2d) for m in normed.modules())


def test_param_count():
    assert param_count(nn.Conv2d(3, 8, kernel_size=1)) == 32
    assert param_count(nn.Upsample(scale_factor=2, mode="bilinear")) == 0
    assert param_count(nn.Sequential()) == 0
    frozen = nn.Linear(4, 4).requires_grad_(False)
    assert param_count(frozen) == 0


def test_upsample_preserves_constants():
    x = torch.full((1, 2, 4, 4), 0.3)
    assert torch.allclose(upsample(x, (32, 32)), torch.full((1, 2, 32, 32), 0.3))


def test_input_gradients_match_finite_differences(gradcheck_fraction):
    backbone = build_backbone(tiny_backbone()).double()
    image = torch.rand(1, 3, 32, 32, dtype=torch.float64, requires_grad=True)

    def loss():
        return sum((stage ** 2).sum() for stage in backbone_forward(image, backbone))

    assert gradcheck_fraction(loss, [image], samples=60) >= 0.99
