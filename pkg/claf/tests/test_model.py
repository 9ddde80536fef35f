from collections import OrderedDict

import numpy as np
import pytest

from claf import model as models
from claf import tensor as T
from claf.errors import ConfigError, FreezeViolation, ShapeError


class TestArchitectures(object):

    @pytest.mark.parametrize('name', ['desk', 'resnet18', 'tiny'])
    def test_named(self, name):
        arch = models.EncoderArch.named(name)
        assert arch.layers[-1].kind == 'gap'
        assert arch.dim == arch.layers[-1].out_channels

    def test_unknown_encoder(self):
        with pytest.raises(ConfigError):
            models.EncoderArch.named('vgg')

    def test_must_end_with_gap(self):
        with pytest.raises(ConfigError):
            models.EncoderArch((('conv', 3, 4, 1),))

    def test_channel_chain_checked(self):
        with pytest.raises(ConfigError):
            models.EncoderArch((('conv', 3, 4, 1), ('gap', 5, 5, 1)))

    def test_block_shortcut_only_when_needed(self):
        arch = models.EncoderArch((('block', 3, 4, 2), ('block', 4, 4, 1),
                                   ('gap', 4, 4, 1)))
        shapes = arch.param_shapes()
        assert 'block0.shortcut.weight' in shapes
        assert 'block1.shortcut.weight' not in shapes


class TestForward(object):

    def test_shapes(self, tiny_networks):
        f, g, c = tiny_networks
        x = np.random.default_rng(0).uniform(size=(5, 3, 32, 32))
        v = models.encode(f, x)
        assert v.shape == (5, f.arch.dim)
        z = g(v)
        assert z.shape == (5, 4)
        np.testing.assert_allclose(np.linalg.norm(z.data, axis=1), np.ones(5))
        assert c(v).shape == (5, 2)

    def test_project_matches_loops(self, tiny_networks):
        _, g, _ = tiny_networks
        rng = np.random.default_rng(3)
        g = g.replace(OrderedDict(g.params, **{
            'fc1.bias': rng.normal(size=8), 'fc2.bias': rng.normal(size=4)}))
        v = rng.normal(size=(3, 8))
        w1, b1 = g.params['fc1.weight'], g.params['fc1.bias']
        w2, b2 = g.params['fc2.weight'], g.params['fc2.bias']
        expected = np.zeros((3, 4))
        for row in range(3):
            hidden = [max(0.0, sum(v[row, k] * w1[k, j] for k in range(8)) + b1[j])
                      for j in range(8)]
            z = [sum(hidden[j] * w2[j, m] for j in range(8)) + b2[m]
                 for m in range(4)]
            norm = sum(value * value for value in z) ** 0.5
            expected[row] = [value / norm for value in z]
        np.testing.assert_allclose(g(v).data, expected, rtol=0, atol=1e-12)

    def test_classify_matches_loops(self, tiny_networks):
        _, _, c = tiny_networks
        rng = np.random.default_rng(4)
        c = c.replace(OrderedDict(c.params, **{'fc.bias': rng.normal(size=2)}))
        v = rng.normal(size=(3, 8))
        w, b = c.params['fc.weight'], c.params['fc.bias']
        expected = [[sum(v[row, k] * w[k, n] for k in range(8)) + b[n]
                     for n in range(2)] for row in range(3)]
        np.testing.assert_allclose(c(v).data, expected, rtol=0, atol=1e-12)

    def test_bias_free_projection_ignores_scale(self):
        g = models.init_projection(8, 64, 4, seed=1)
        assert not g.params['fc1.bias'].any()
        assert not g.params['fc2.bias'].any()
        v = np.random.default_rng(5).uniform(0.1, 1.0, size=(4, 8))
        np.testing.assert_allclose(g(2.0 * v).data, g(v).data, rtol=0,
                                   atol=1e-12)

    def test_resnet_block_forward(self):
        f = models.init_encoder((('conv', 3, 4, 1), ('block', 4, 6, 2),
                                 ('gap', 6, 6, 1)), seed=0)
        out = f(np.full((2, 3, 8, 8), 0.5))
        assert out.shape == (2, 6)

    def test_bad_input_shape(self, tiny_networks):
        f, g, c = tiny_networks
        with pytest.raises(ShapeError):
            models.encode(f, np.zeros((2, 1, 32, 32)))
        with pytest.raises(ShapeError):
            g(np.zeros((2, 3)))
        with pytest.raises(ShapeError):
            c(np.zeros((2, 3)))

    def test_weights_override(self, tiny_networks):
        _, _, c = tiny_networks
        weights = {'fc.weight': T.DiffTensor(np.zeros((8, 2))),
                   'fc.bias': T.DiffTensor([1.0, -1.0])}
        logits = c(np.ones((3, 8)), weights)
        np.testing.assert_array_equal(logits.data, [[1.0, -1.0]] * 3)

    def test_attack_forward_records_only_the_input(self, tiny_networks):
        f, _, c = tiny_networks
        x = T.parameter(np.full((1, 3, 32, 32), 0.5))
        with T.Tape() as tape:
            out = T.sum_(c(f(x)))
        grads = tape.backward(out)
        assert list(tape.leaves) == [x.node_id]
        assert grads.of(x).shape == x.shape


class TestInit(object):

    def test_deterministic(self):
        a = models.init_encoder(models.EncoderArch.named('tiny'), 3)
        b = models.init_encoder(models.EncoderArch.named('tiny'), 3)
        assert a.hash() == b.hash()

    def test_seed_changes_weights(self):
        arch = models.EncoderArch.named('tiny')
        assert models.init_params(arch, 0).hash() != \
            models.init_params(arch, 1).hash()

    def test_scope_changes_weights(self):
        a = models.init_classifier(8, 2, 0, scope='c')
        b = models.init_classifier(8, 2, 0, scope='head')
        assert a.hash() != b.hash()

    def test_kaiming_variance(self):
        f = models.init_params(models.EncoderArch.named('desk'), seed=0)
        g = models.init_projection(256, 512, 128, seed=0)
        checked = 0
        for network in (f, g):
            for name, (shape, fan_in) in network.arch.param_shapes().items():
                value = network.params[name]
                if fan_in is None or value.size < 4000:
                    continue
                assert value.var() == pytest.approx(2.0 / fan_in, rel=0.1)
                checked += 1
        assert checked >= 5

    def test_biases_zero_and_weights_bounded(self):
        c = models.init_classifier(16, 3, seed=0)
        assert not c.params['fc.bias'].any()
        assert np.abs(c.params['fc.weight']).max() <= np.sqrt(6.0 / 16)
        assert c.num_classes == 3


class TestNetwork(object):

    def test_params_read_only(self, tiny_networks):
        f = tiny_networks[0]
        with pytest.raises(ValueError):
            f.params['conv0.weight'][0, 0, 0, 0] = 1.0

    def test_replace_returns_new_network(self, tiny_networks):
        _, _, c = tiny_networks
        params = OrderedDict((k, v + 1.0) for k, v in c.params.items())
        other = c.replace(params)
        assert type(other) is type(c)
        assert other.hash() != c.hash()

    def test_replace_checks_shapes(self, tiny_networks):
        _, _, c = tiny_networks
        with pytest.raises(ShapeError):
            c.replace(OrderedDict([('fc.weight', np.zeros((3, 2))),
                                   ('fc.bias', np.zeros(2))]))

    def test_replace_checks_names(self, tiny_networks):
        _, _, c = tiny_networks
        with pytest.raises(ShapeError):
            c.replace(OrderedDict([('fc.weight', np.zeros((8, 2)))]))

    def test_rejects_non_finite(self, tiny_networks):
        _, _, c = tiny_networks
        with pytest.raises(ShapeError):
            c.replace(OrderedDict([('fc.weight', np.full((8, 2), np.nan)),
                                   ('fc.bias', np.zeros(2))]))

    def test_variables_require_grad(self, tiny_networks):
        _, g, _ = tiny_networks
        variables = g.variables()
        assert list(variables) == list(g.params)
        assert all(v.requires_grad for v in variables.values())


class TestCheckFrozen(object):

    def test_unchanged(self, tiny_networks):
        f, g, _ = tiny_networks
        models.check_frozen('phase', f=(f, f), g=(g.hash(), g))

    def test_changed(self, tiny_networks):
        _, _, c = tiny_networks
        moved = c.replace(OrderedDict((k, v + 0.5) for k, v in c.params.items()))
        with pytest.raises(FreezeViolation) as e:
            models.check_frozen('stage 2', c=(c.hash(), moved))
        assert 'stage 2 changed c' in str(e.value)
