import pytest
import torch

from conftest import tiny_backbone, tiny_lesion_config
from lesionnet.core_types import ConfigError, ShapeError, presence_from_maps, threshold_maps
from lesionnet.helpers.checkpoint import save_checkpoint
from lesionnet.helpers.run_config import LesionNetConfig, RunConfig, TrainConfig, VARIANTS
from lesionnet.losses import dual_loss
from lesionnet.models.backbone import param_count
from lesionnet.models.lesion_net import (
    MergeStep,
    build_lesion_net,
    classify_lesions,
    lesion_net_forward,
    load_lesion_net,
    merge_step,
)


def _zero_head(net):
    with torch.no_grad():
        net.head.weight.zero_()
        net.head.bias.zero_()
    return net


@pytest.mark.parametrize("variant, steps", [(32, 0), (16, 1), (8, 2), (4, 3), (2, 4)])
def test_merge_step_count(variant, steps):
    net = build_lesion_net(tiny_lesion_config(variant))
    assert len(net.merges) == steps
    assert net.head.out_channels == 8


def test_two_s_consumes_every_skip():
    net = build_lesion_net(tiny_lesion_config(2))
    assert [step.reduce.out_channels for step in net.merges] == [4, 4, 3, 2]


def test_invalid_variant():
    with pytest.raises(ConfigError):
        LesionNetConfig(variant=7)


def test_merge_step_shapes():
    step = MergeStep(256, 128)
    out = merge_step(step, torch.rand(256, 4, 4), torch.rand(128, 8, 8))
    assert out.shape == (256, 8, 8)


def test_merge_step_upsamples_constants_exactly():
    step = MergeStep(3, 2)
    with torch.no_grad():
        step.reduce.weight.zero_()
        step.reduce.bias.fill_(0.25)
    out = step(torch.rand(1, 3, 4, 4), torch.rand(1, 2, 8, 8))
    assert torch.allclose(out[:, :2], torch.full((1, 2, 8, 8), 0.25))


def test_merge_step_rejects_same_side_skip():
    with pytest.raises(ShapeError):
        MergeStep(4, 2)(torch.rand(1, 4, 4, 4), torch.rand(1, 2, 4, 4))


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("side", [32, 64, 128])
def test_every_variant_keeps_input_size(variant, side):
    net = build_lesion_net(tiny_lesion_config(variant))
    with torch.no_grad():
        maps = lesion_net_forward(net, torch.rand(2, 3, side, side))
    assert maps.shape == (2, 8, side, side)
    assert maps.min() >= 0.0 and maps.max() <= 1.0


def test_single_image_forward_and_large_input():
    net = build_lesion_net(tiny_lesion_config(16))
    with torch.no_grad():
        assert lesion_net_forward(net, torch.rand(3, 256, 256)).shape == (8, 256, 256)


def test_bad_side():
    net = build_lesion_net(tiny_lesion_config(16))
    with pytest.raises(ShapeError):
        lesion_net_forward(net, torch.rand(1, 3, 100, 100))


def test_zero_head_gives_one_half_everywhere():
    net = _zero_head(build_lesion_net(tiny_lesion_config(8)))
    with torch.no_grad():
        maps = lesion_net_forward(net, torch.rand(1, 3, 64, 64))
        presence = classify_lesions(net, torch.rand(1, 3, 64, 64))
    assert torch.all(maps == 0.5)
    assert torch.all(presence == 0.5)


def test_classify_equals_composition_on_20_inputs():
    net = build_lesion_net(tiny_lesion_config(16))
    with torch.no_grad():
        for _ in range(20):
            image = torch.rand(1, 3, 64, 64)
            composed = presence_from_maps(lesion_net_forward(net, image))
            assert torch.equal(classify_lesions(net, image), composed)


def test_one_hot_pixel_per_channel_thresholds_to_all_present():
    maps = torch.zeros(8, 16, 16)
    for j in range(8):
        maps[j, j, 2 * j] = 0.9
    assert threshold_maps(presence_from_maps(maps).view(8, 1, 1)).flatten().tolist() == [1] * 8


def test_param_count_grows_with_the_expansive_path():
    counts = [param_count(build_lesion_net(LesionNetConfig(variant=v))) for v in (32, 16, 8, 4, 2)]
    assert counts == sorted(counts)
    assert len(set(counts)) == 5


def test_dual_loss_gradients_match_finite_differences(gradcheck_fraction):
    net = build_lesion_net(tiny_lesion_config(16)).double()
    image = torch.rand(2, 3, 32, 32, dtype=torch.float64)
    target = (torch.rand(2, 8, 32, 32) > 0.7).double()
    config = TrainConfig().dual()

    def loss():
        return dual_loss(net(image), target, config)

    params = [p for p in net.parameters()]
    assert gradcheck_fraction(loss, params, samples=8) >= 0.99


def test_checkpoint_round_trip(tmp_path):
    config = RunConfig(lesion_net=LesionNetConfig(variant=8, backbone=tiny_backbone()))
    net = build_lesion_net(config.lesion_net)
    save_checkpoint(tmp_path / "net.pt", net, "lesion_net", config.to_dict(), mode="8s")
    loaded = load_lesion_net(tmp_path / "net.pt")
    image = torch.rand(1, 3, 32, 32)
    with torch.no_grad():
        assert torch.equal(loaded(image), net.eval()(image))
    assert loaded.variant == 8
