import numpy as np
import pytest

from dermoscan import network as N
from dermoscan.layers import Conv2D, upsample_nn
from dermoscan.network import (
    DermoNet, NetworkConfig, ResidualConvBlock, fuse_ffm, iter_layers,
)
from dermoscan.tensor import (
    Tape, Tensor, backward, grad_check, mul, no_grad, relu, tsum,
)


def micro_config(**kw):
    base = dict(input_hw_detection=(32, 32), input_hw_recognition=(32, 32),
                stage_channels=(2, 3, 4, 5, 6),
                encoder1_stage_repeats=(1, 1, 1, 1),
                encoder2_middle_repeats=1, num_classes=2)
    base.update(kw)
    return NetworkConfig(**base)


def expected_param_count(cfg):
    """Closed-form oracle for the total parameter count, derived from the
    config arithmetic alone (independent of the layer walk)."""
    def conv(k, cin, cout):
        return k * k * cin * cout + cout

    def sep(cin, cout, k=3):
        return k * k * cin + cin * cout + cout

    def bn(c):
        return 2 * c

    def conv_block(cin, cout):
        return (conv(3, cin, cout) + bn(cout) + conv(3, cout, cout) + bn(cout)
                + conv(1, cin, cout) + bn(cout))

    def iden_block(c):
        return 2 * (conv(3, c, c) + bn(c))

    def down_block(cin, cout):
        return (sep(cin, cout) + bn(cout) + sep(cout, cout) + bn(cout)
                + conv(1, cin, cout) + bn(cout))

    def head(cin):
        return (cin * cfg.fcl_width + cfg.fcl_width
                + cfg.fcl_width * cfg.num_classes + cfg.num_classes)

    c = cfg.stage_channels
    total = conv(7, 3, c[0]) + bn(c[0])
    cin = c[0]
    for i, rep in enumerate(cfg.encoder1_stage_repeats):
        total += conv_block(cin, c[i + 1]) + rep * iden_block(c[i + 1])
        cin = c[i + 1]
    total += down_block(3, c[0]) + down_block(c[0], c[1]) + down_block(c[1], c[2])
    total += down_block(c[2], c[3])
    total += cfg.encoder2_middle_repeats * 3 * (sep(c[3], c[3]) + bn(c[3]))
    total += down_block(c[3], c[4])
    if cfg.include_decoder:
        prev = 2 * c[4]
        for n in (4, 3, 2, 1):
            total += sep(2 * c[n - 1] + prev, c[n - 1]) + bn(c[n - 1])
            prev = c[n - 1]
        total += conv(1, c[0], 1)
    return total + head(c[4]) + head(c[4]) + head(2 * c[4])


class TestConfig:
    def test_defaults_are_toy(self):
        cfg = NetworkConfig()
        assert cfg.input_hw_detection == (192, 256)
        assert cfg.stage_channels == (8, 16, 32, 64, 128)

    def test_validation(self):
        with pytest.raises(ValueError):
            NetworkConfig(num_classes=4)
        with pytest.raises(ValueError):
            NetworkConfig(input_hw_detection=(100, 256))
        with pytest.raises(ValueError):
            NetworkConfig(stage_channels=(8, 16, 32))

    def test_config_lines_round_trip(self):
        cfg = micro_config(num_classes=3, dropout_rate=0.25)
        again = NetworkConfig.from_config_lines(cfg.to_config_lines())
        assert again == cfg

    def test_class_names(self):
        assert NetworkConfig(num_classes=3).class_names == ("Nev", "SK", "Mel")


class TestEncoder1:
    def test_toy_stage_shapes_at_default_resolution(self):
        net = DermoNet(NetworkConfig())
        net.init_weights(0)
        x = Tensor(np.zeros((1, 192, 256, 3)))
        with no_grad():
            enc = net.encoder1(x)
        shapes = [t.shape[1:] for t in enc.stages]
        assert shapes == [(96, 128, 8), (48, 64, 16), (24, 32, 32),
                          (12, 16, 64), (6, 8, 128)]

    def test_zero_residual_branch_reduces_to_shortcut(self):
        rng = np.random.default_rng(0)
        block = ResidualConvBlock(3, 4, stride=2)
        block.proj.kernel.data[...] = rng.normal(size=block.proj.kernel.shape)
        x = Tensor(rng.normal(size=(1, 6, 6, 3)))
        with no_grad():
            got = block(x)
            shortcut = relu(block.bn_proj(block.proj(x)))
        assert np.array_equal(got.data, shortcut.data)

    def test_residual_addition_matters(self):
        from dermoscan.rng import make_rng
        block = ResidualConvBlock(3, 3, stride=1)
        for _, layer in iter_layers("", block):
            if hasattr(layer, "init_params"):
                layer.init_params(make_rng(5))
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(1, 4, 4, 3)))
        with no_grad():
            full = block(x)
            main_only = relu(block.bn2(block.conv2(relu(block.bn1(block.conv1(x))))))
        assert np.abs(full.data - main_only.data).max() > 0


class TestEncoder2:
    def test_same_stage_shapes_as_encoder1(self):
        net = DermoNet(micro_config())
        net.init_weights(1)
        x = Tensor(np.zeros((1, 32, 32, 3)))
        with no_grad():
            e1 = net.encoder1(x)
            e2 = net.encoder2(x)
        assert [t.shape for t in e1.stages] == [t.shape for t in e2.stages]

    def test_middle_repeats_change_param_count_linearly(self):
        c3 = micro_config().stage_channels[3]
        per_repeat = 3 * ((9 * c3 + c3 * c3 + c3) + 2 * c3)
        n0 = DermoNet(micro_config(encoder2_middle_repeats=0)).param_count
        n2 = DermoNet(micro_config(encoder2_middle_repeats=2)).param_count
        assert n2 - n0 == 2 * per_repeat

    def test_no_spatial_standard_convolutions(self):
        net = DermoNet(micro_config())
        for path, layer in iter_layers("encoder2", net.encoder2):
            if isinstance(layer, Conv2D):
                assert layer.kernel_size == 1, f"{path} is a {layer.kernel_size}x-kernel standard conv"


class TestFusion:
    def test_channel_doubling(self):
        a = Tensor(np.zeros((1, 2, 2, 128)))
        b = Tensor(np.zeros((1, 2, 2, 128)))
        assert fuse_ffm(a, b).shape == (1, 2, 2, 256)

    def test_first_half_preserved(self):
        rng = np.random.default_rng(2)
        a = Tensor(rng.normal(size=(1, 3, 3, 4)))
        z = Tensor(np.zeros((1, 3, 3, 4)))
        fused = fuse_ffm(a, z)
        assert np.array_equal(fused.data[..., :4], a.data)
        assert np.all(fused.data[..., 4:] == 0)

    def test_gradient_reaches_both_encoders(self):
        net = DermoNet(micro_config())
        net.init_weights(3)
        x = Tensor(np.random.default_rng(3).normal(size=(1, 32, 32, 3)))
        net.zero_grad()
        with Tape():
            logits = net.mask_logits(x)
            backward(tsum(mul(logits, logits)))
        g1 = net.encoder1.stem.kernel.grad
        g2 = net.encoder2.entry1.sep1.depthwise.grad
        assert g1 is not None and np.abs(g1).max() > 0
        assert g2 is not None and np.abs(g2).max() > 0


class TestDecoder:
    def test_stage_resolutions_and_output(self):
        net = DermoNet(NetworkConfig())
        net.init_weights(4)
        x = Tensor(np.zeros((1, 192, 256, 3)))
        with no_grad():
            enc1, enc2, ffm = net.encode(x)
            assert ffm.shape == (1, 6, 8, 256)
            d = ffm
            sizes = []
            for stage, n in zip(net.decoder.stages, (4, 3, 2, 1)):
                d = stage(d, enc1[n], enc2[n])
                sizes.append(d.shape[1:3])
            out = net.decoder.out_conv(upsample_nn(d))
        assert sizes == [(12, 16), (24, 32), (48, 64), (96, 128)]
        assert out.shape == (1, 192, 256, 1)

    def test_skip_concat_channel_arithmetic(self):
        cfg = micro_config()
        net = DermoNet(cfg)
        c = cfg.stage_channels
        prev = 2 * c[4]
        for stage, n in zip(net.decoder.stages, (4, 3, 2, 1)):
            assert stage.sep.depthwise.shape[2] == 2 * c[n - 1] + prev
            prev = c[n - 1]


class TestHeads:
    def test_average_of_three(self):
        lt1 = Tensor([[0.6, 0.4]])
        lt2 = Tensor([[0.2, 0.8]])
        lt3 = Tensor([[0.4, 0.6]])
        o = lt1 + (lt2 - lt1) / 3.0 + (lt3 - lt1) / 3.0
        assert np.allclose(o.data, [[0.4, 0.6]], atol=1e-12)

    def test_simplex_outputs(self):
        net = DermoNet(micro_config(num_classes=3))
        net.init_weights(6)
        x = Tensor(np.random.default_rng(6).normal(size=(2, 32, 32, 3)))
        with no_grad():
            enc1, enc2, ffm = net.encode(x)
            lt1, lt2, lt3, o = net.heads_forward(enc1.top, enc2.top, ffm)
        for t in (lt1, lt2, lt3, o):
            assert np.abs(t.data.sum(axis=1) - 1.0).max() < 1e-9
            assert np.all(t.data >= 0)

    def test_tied_heads_average_exactly(self):
        cfg = micro_config()
        net = DermoNet(cfg)
        net.init_weights(7)
        # make head2/head3 share head1's weights; FFM head has twice the
        # input width, so tile the first dense accordingly
        net.head2.fc1.weight.data[...] = net.head1.fc1.weight.data
        net.head2.fc1.bias.data[...] = net.head1.fc1.bias.data
        net.head2.fc2.weight.data[...] = net.head1.fc2.weight.data
        net.head2.fc2.bias.data[...] = net.head1.fc2.bias.data
        net.head3.fc1.weight.data[...] = np.vstack(
            [net.head1.fc1.weight.data, np.zeros_like(net.head1.fc1.weight.data)])
        net.head3.fc1.bias.data[...] = net.head1.fc1.bias.data
        net.head3.fc2.weight.data[...] = net.head1.fc2.weight.data
        net.head3.fc2.bias.data[...] = net.head1.fc2.bias.data

        x = Tensor(np.random.default_rng(7).normal(size=(1, 32, 32, 3)))
        with no_grad():
            enc1, _, _ = net.encode(x)
            e1 = enc1.top
            lt1, lt2, lt3, o = net.heads_forward(e1, e1, fuse_ffm(e1, Tensor(np.zeros(e1.shape))))
        assert np.array_equal(lt1.data, lt2.data)
        assert np.array_equal(lt1.data, lt3.data)
        assert np.array_equal(o.data, lt1.data)


class TestForward:
    def test_full_resolution_contract(self):
        net = DermoNet(NetworkConfig(num_classes=2))
        net.init_weights(8)
        x = Tensor(np.random.default_rng(8).normal(size=(1, 192, 256, 3)))
        with no_grad():
            mask, probs = net.forward(x, mode="eval")
        assert mask.shape == (1, 192, 256, 1)
        assert probs.shape == (1, 2)
        assert np.all((mask.data >= 0) & (mask.data <= 1))
        assert abs(probs.data.sum() - 1.0) < 1e-9

    def test_eval_mode_deterministic(self):
        net = DermoNet(micro_config())
        net.init_weights(9)
        net.set_mode("eval")
        x = Tensor(np.random.default_rng(9).normal(size=(1, 32, 32, 3)))
        with no_grad():
            m1, p1 = net.forward(x)
            m2, p2 = net.forward(x)
        assert np.array_equal(m1.data, m2.data)
        assert np.array_equal(p1.data, p2.data)

    def test_resolution_mismatch_rejected(self):
        net = DermoNet(micro_config())
        with pytest.raises(ValueError):
            net.forward(Tensor(np.zeros((1, 64, 64, 3))))

    def test_param_count_matches_independent_walker(self):
        for cfg in (NetworkConfig(), micro_config(num_classes=3),
                    micro_config(include_decoder=False)):
            assert DermoNet(cfg).param_count == expected_param_count(cfg)

    def test_joint_backward_reaches_decoder_and_all_heads(self):
        # 64x64 keeps the top feature maps at 2x2 so no head sees an
        # all-dead relu by chance
        net = DermoNet(micro_config(input_hw_detection=(64, 64)))
        net.init_weights(10)
        net.set_mode("eval")
        x = Tensor(np.random.default_rng(10).normal(size=(1, 64, 64, 3)))
        net.zero_grad()
        with Tape():
            mask, probs = net.forward(x)
            backward(tsum(mask) + tsum(mul(probs, probs)))
        for t in (net.decoder.out_conv.kernel, net.head1.fc2.weight,
                  net.head2.fc2.weight, net.head3.fc2.weight,
                  net.encoder1.stem.kernel, net.encoder2.entry1.sep1.pointwise):
            assert t.grad is not None and np.abs(t.grad).max() > 0


def test_end_to_end_gradient_check_micro():
    net = DermoNet(micro_config())
    net.init_weights(11)
    net.set_mode("eval")
    x = Tensor(np.random.default_rng(11).normal(size=(1, 32, 32, 3)))
    w_mask = Tensor(np.random.default_rng(12).normal(size=(1, 32, 32, 1)))

    def f(t):
        mask, probs = net.forward(t)
        return tsum(mul(mask, w_mask)) + tsum(mul(probs, probs))

    rep = grad_check(f, x, step=1e-5, tol=1e-3, max_entries=32, rng=0)
    assert rep.passed, str(rep)
