"""
Unit Tests for the Compact Latent Network
Feature adjustment, latent encoding, deviation prediction, weight augmentation and gradients
"""

from dataclasses import replace

import numpy as np
import pytest
import torch

from siamadapt.config import BackboneConfig, CLNetConfig
from siamadapt.geometry import NEG, POS, LabelMap
from siamadapt.networks.clnet import (
    CLNet, CLNetBranch, DeviationPredictor, FeatureAdjuster, WeightDelta, adjusted_forward, augment_weights,
    clnet_parameter_count, clnet_total_parameters, delta_size, fc_adjust, fc_delta_size, latent_encode,
    latent_length, predict_delta, split_delta,
)
from siamadapt.networks.siamese import HeadWeights, count_parameters, head_forward, similarity_map
from siamadapt.utils.errors import ConfigurationError, EncoderInputError, ValidationError


def numpy_latent(features: np.ndarray, labels: np.ndarray, value: int):
    """Per-channel mean and population std over the cell vectors of every anchor with `value`"""
    channels = features.shape[0]
    flat = features.reshape(channels, -1)
    cells = flat.shape[1]
    members = np.array([flat[:, index % cells] for index in np.flatnonzero(labels == value)])
    return members.mean(axis=0), members.std(axis=0)


def double_weights(out_dim: int, in_dim: int, seed: int) -> HeadWeights:
    generator = torch.Generator().manual_seed(seed)
    return HeadWeights(torch.randn(out_dim, in_dim, generator=generator, dtype=torch.float64),
                       torch.randn(out_dim, generator=generator, dtype=torch.float64),
                       torch.zeros((), dtype=torch.float64))


# ==================== FEATURE ADJUSTER TESTS ====================

class TestFeatureAdjuster:
    """Test suite for FeatureAdjuster"""

    def test_keeps_spatial_size(self):
        """Test a 25x25 map stays 25x25 with c_bar channels"""
        adjuster = FeatureAdjuster(16, 6).eval()
        out = adjuster(torch.randn(1, 16, 25, 25))
        assert out.shape == (1, 6, 25, 25)

    def test_zero_weights_give_zero_map(self):
        """Test zero weights and biases give a zero map without normalisation"""
        adjuster = FeatureAdjuster(8, 4, batch_norm=False)
        for parameter in adjuster.parameters():
            torch.nn.init.zeros_(parameter)
        assert torch.count_nonzero(adjuster(torch.randn(2, 8, 5, 5))) == 0

    def test_channel_mismatch(self):
        """Test the wrong input channel count raises ConfigurationError"""
        with pytest.raises(ConfigurationError):
            FeatureAdjuster(8, 4)(torch.randn(1, 7, 5, 5))


# ==================== LATENT ENCODER TESTS ====================

class TestLatentEncode:
    """Test suite for latent_encode"""

    def test_two_member_example(self):
        """Test the set {(1,3),(3,5)} gives mu (2,4) and sigma (1,1)"""
        features = torch.tensor([[1.0, 3.0], [3.0, 5.0]]).reshape(1, 2, 1, 2)
        latent = latent_encode(features, LabelMap(torch.tensor([POS, POS], dtype=torch.int8)), branch='reg')
        assert latent.segment('mu_pos').tolist() == [2.0, 4.0]
        assert latent.segment('sigma_pos').tolist() == [1.0, 1.0]

    def test_equal_members_have_zero_sigma(self):
        """Test identical members give mu = v and sigma = 0"""
        features = torch.tensor([0.5, -2.0]).view(1, 2, 1, 1).expand(1, 2, 2, 2).contiguous()
        labels = torch.tensor([POS, POS, NEG, NEG])
        latent = latent_encode(features, labels)
        assert latent.segment('mu_pos').tolist() == [0.5, -2.0]
        assert latent.segment('sigma_pos').tolist() == [0.0, 0.0]
        assert latent.segment('sigma_neg').tolist() == [0.0, 0.0]

    def test_matches_numpy_oracle(self):
        """Test 1000 random instances against the direct mean/std oracle"""
        rng = np.random.default_rng(0)
        for _ in range(1000):
            channels, height, width, k = rng.integers(1, 5), rng.integers(1, 4), rng.integers(2, 4), rng.integers(1, 3)
            features = rng.normal(size=(channels, height, width))
            labels = rng.integers(-1, 2, size=k * height * width)
            labels[0], labels[1] = POS, NEG
            latent = latent_encode(torch.from_numpy(features).unsqueeze(0), torch.from_numpy(labels))
            for value, mu_name, sigma_name in ((POS, 'mu_pos', 'sigma_pos'), (NEG, 'mu_neg', 'sigma_neg')):
                mu, sigma = numpy_latent(features, labels, value)
                np.testing.assert_allclose(latent.segment(mu_name).numpy(), mu, rtol=1e-6, atol=1e-12)
                np.testing.assert_allclose(latent.segment(sigma_name).numpy(), sigma, rtol=1e-6, atol=1e-10)

    def test_independent_of_set_size(self):
        """Test duplicating every member leaves the latent unchanged"""
        torch.manual_seed(0)
        features = torch.randn(1, 3, 2, 2, dtype=torch.float64)
        labels = torch.tensor([POS, NEG, -1, POS])
        doubled = torch.cat([labels, labels])
        once = latent_encode(features, labels)
        twice = latent_encode(features, doubled)
        assert torch.allclose(once.values, twice.values)

    def test_batch_pools_sets(self):
        """Test a batch of two pools both sets across pairs"""
        features = torch.tensor([1.0, 3.0]).view(2, 1, 1, 1)
        labels = torch.tensor([[POS, NEG], [POS, NEG]])
        features = features.expand(2, 1, 1, 2).contiguous()
        latent = latent_encode(features, labels)
        assert latent.segment('mu_pos').tolist() == [2.0]
        assert latent.segment('sigma_pos').tolist() == [1.0]

    def test_lengths(self, clnet_cfg):
        """Test every branch encodes to 4 c_bar values"""
        c_bar = clnet_cfg.latent_channels
        labels = torch.tensor([POS, NEG, NEG, -1])
        assert len(latent_encode(torch.randn(1, c_bar, 2, 2), labels, 'cls')) == 4 * c_bar
        assert len(latent_encode(torch.randn(1, 2 * c_bar, 2, 2), labels, 'reg')) == 4 * c_bar
        assert latent_length(clnet_cfg) == 4 * c_bar

    def test_pooled_mode_zero_fills_sigma(self):
        """Test the pooled variant keeps the length with zero sigma segments"""
        latent = latent_encode(torch.randn(1, 3, 2, 2), torch.tensor([POS, POS, NEG, NEG]), mode='pooled')
        assert len(latent) == 12
        assert torch.count_nonzero(latent.segment('sigma_pos')) == 0
        assert torch.count_nonzero(latent.segment('sigma_neg')) == 0

    def test_empty_sets(self):
        """Test a missing set raises EncoderInputError"""
        features = torch.randn(1, 2, 2, 2)
        with pytest.raises(EncoderInputError):
            latent_encode(features, torch.tensor([POS, -1, -1, -1]), 'cls')
        with pytest.raises(EncoderInputError):
            latent_encode(features, torch.tensor([NEG, NEG, -1, -1]), 'reg')
        # reg ignores the negative set
        latent_encode(features, torch.tensor([POS, -1, -1, -1]), 'reg')


# ==================== DEVIATION PREDICTOR TESTS ====================

class TestDeviationPredictor:
    """Test suite for predict_delta and split_delta"""

    def test_delta_sizes(self):
        """Test FC3 sizes of the default heads and modes"""
        assert delta_size(10, 256) == 2571
        assert delta_size(20, 256) == 5141
        assert delta_size(10, 256, 'cbam') == 10 + 257 + 1
        assert delta_size(10, 256, 'film') == 2 * 2570 + 1
        with pytest.raises(ConfigurationError):
            delta_size(10, 256, 'spatial')

    def test_fc_delta_sizes(self):
        """Test template and response delta sizes"""
        model = BackboneConfig(head_type='fc', anchors_per_cell=1, anchor_ratios=(1.0,))
        assert fc_delta_size(model, 'template') == 256 * 16 * 16 + 1
        assert fc_delta_size(model, 'response') == 25 * 25 + 1

    def test_zero_fc3_gives_zero_delta(self):
        """Test a zeroed FC3 outputs tanh(0) = 0"""
        predictor = DeviationPredictor(24, 16, 91).zero_()
        out = predictor(torch.randn(24))
        assert torch.count_nonzero(out) == 0

    def test_matches_mlp_oracle(self):
        """Test the predictor against a chained affine/nonlinearity oracle"""
        torch.manual_seed(4)
        predictor = DeviationPredictor(12, 16, 7).double()
        c = torch.randn(12, dtype=torch.float64)
        weights = {name: p.detach().numpy() for name, p in predictor.named_parameters()}
        hidden = np.maximum(weights['fc1.weight'] @ c.numpy() + weights['fc1.bias'], 0)
        hidden = np.maximum(weights['fc2.weight'] @ hidden + weights['fc2.bias'], 0)
        expected = np.tanh(weights['fc3.weight'] @ hidden + weights['fc3.bias'])
        assert np.abs(predictor(c).detach().numpy() - expected).max() < 1e-6

    def test_output_bounded(self):
        """Test every delta element lies in (-1, 1)"""
        predictor = DeviationPredictor(8, 16, 40)
        with torch.no_grad():
            predictor.fc3.weight.mul_(100)
        out = predictor(torch.randn(8) * 10)
        assert out.abs().max() <= 1.0

    def test_size_mismatch(self):
        """Test a latent of the wrong length raises ConfigurationError"""
        predictor = DeviationPredictor(24, 16, delta_size(2, 3))
        latent = latent_encode(torch.randn(1, 5, 2, 2), torch.tensor([POS, NEG, NEG, NEG]))
        with pytest.raises(ConfigurationError):
            predict_delta(latent, predictor, 2, 3)

    def test_split_row_major(self):
        """Test the flat vector fills the head matrix row by row and ends with the offset"""
        raw = torch.arange(delta_size(2, 2), dtype=torch.float32)
        delta = split_delta(raw, 2, 2)
        assert delta.matrix.tolist() == [[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]]
        assert float(delta.offset) == 6.0
        with pytest.raises(ConfigurationError):
            split_delta(raw[:-1], 2, 2)


# ==================== WEIGHT AUGMENTATION TESTS ====================

class TestAugmentWeights:
    """Test suite for augment_weights and adjusted_forward"""

    @pytest.mark.parametrize('mode', ['additive', 'cbam', 'film'])
    def test_zero_delta_is_identity(self, mode):
        """Test a zero deviation leaves theta_1 bit-exact in every mode"""
        theta = HeadWeights(torch.randn(4, 3), torch.randn(4), torch.zeros(()))
        delta = split_delta(torch.zeros(delta_size(4, 3, mode)), 4, 3, mode)
        assert augment_weights(theta, delta).equal(theta)

    def test_cbam_example(self):
        """Test [[1,2],[3,4]] with row scale (2,1) and column scale (1,3)"""
        theta = HeadWeights(torch.tensor([[1.0], [3.0]]), torch.tensor([2.0, 4.0]), torch.zeros(()))
        delta = WeightDelta('cbam', torch.zeros(()), row_scale=torch.tensor([2.0, 1.0]),
                            col_scale=torch.tensor([1.0, 3.0]))
        assert augment_weights(theta, delta).full.tolist() == [[2.0, 12.0], [3.0, 12.0]]

    def test_film_coefficients(self):
        """Test FILM scales then shifts each element"""
        theta = HeadWeights(torch.tensor([[2.0]]), torch.tensor([1.0]), torch.zeros(()))
        delta = WeightDelta('film', torch.tensor(0.5), gamma=torch.tensor([[3.0, 2.0]]),
                            beta=torch.tensor([[1.0, -1.0]]))
        adjusted = augment_weights(theta, delta)
        assert adjusted.full.tolist() == [[7.0, 1.0]]
        assert float(adjusted.offset) == 0.5

    def test_shape_mismatch(self):
        """Test a delta of another head shape raises ConfigurationError"""
        theta = HeadWeights(torch.randn(4, 3), torch.randn(4), torch.zeros(()))
        delta = split_delta(torch.zeros(delta_size(2, 3)), 2, 3)
        with pytest.raises(ConfigurationError):
            augment_weights(theta, delta)

    def test_additive_output_is_linear(self):
        """Test A_a = A + head_1(M; Delta) for the additive mode"""
        torch.manual_seed(5)
        M = torch.randn(1, 3, 4, 4, dtype=torch.float64)
        theta = double_weights(4, 3, 0)
        delta = split_delta(torch.rand(delta_size(4, 3), dtype=torch.float64) - 0.5, 4, 3)
        adjusted = augment_weights(theta, delta)
        shift = head_forward(M, HeadWeights.from_full(delta.matrix, delta.offset))
        assert torch.allclose(adjusted_forward(M, adjusted), head_forward(M, theta) + shift)


# ==================== BRANCH AND NETWORK TESTS ====================

class TestCLNet:
    """Test suite for CLNetBranch and CLNet"""

    def test_branch_identity_invariance(self, model_cfg, clnet_cfg, make_labels):
        """Test a zero predictor reproduces the base head output exactly"""
        torch.manual_seed(6)
        branch = CLNetBranch('cls', model_cfg, clnet_cfg).eval().zero_predictor()
        M = torch.randn(1, model_cfg.head_hidden, model_cfg.map_size, model_cfg.map_size)
        anchors = model_cfg.map_size ** 2 * model_cfg.anchors_per_cell
        labels = make_labels(anchors, 10, 40, torch.Generator().manual_seed(0))
        theta = HeadWeights(torch.randn(10, model_cfg.head_hidden), torch.randn(10), torch.zeros(()))
        adjustment = branch.adjust(M, labels, theta)
        assert torch.equal(adjusted_forward(M, adjustment.weights), head_forward(M, theta))

    @pytest.mark.parametrize('mode', ['template', 'response'])
    def test_fc_identity_invariance(self, fc_config, mode):
        """Test a zero predictor leaves the similarity map bit-exact"""
        model, cfg = fc_config.model, replace(fc_config.clnet, fc_delta_mode=mode)
        branch = CLNetBranch('fc', model, cfg).eval().zero_predictor()
        inst = torch.randn(1, model.embed_channels, model.search_size, model.search_size)
        tmpl = torch.randn(1, model.embed_channels, model.template_size, model.template_size)
        b = torch.tensor(0.1)
        S = similarity_map(inst, tmpl, b)
        labels = torch.full((model.map_size ** 2,), -1)
        labels[:5], labels[5:40] = POS, NEG
        tmpl_a, b_a, S_f = fc_adjust(S, labels, inst, tmpl, b, branch)
        assert torch.equal(S_f, S)
        assert torch.equal(tmpl_a, tmpl)
        assert torch.equal(b_a, b)

    def test_adjust_heads_keys(self, tiny_pipeline, zero_clnet, model_cfg, make_labels):
        """Test adjust_heads returns weights for every head and keeps zero-delta heads unchanged"""
        z = torch.rand(1, 3, model_cfg.exemplar_size, model_cfg.exemplar_size)
        x = torch.rand(1, 3, model_cfg.instance_size, model_cfg.instance_size)
        with torch.no_grad():
            maps = tiny_pipeline.hidden_maps(tiny_pipeline.embed(z), tiny_pipeline.embed(x))
            base = tiny_pipeline.base_weights()
            labels = make_labels(845, 8, 56, torch.Generator().manual_seed(1))
            adjusted = zero_clnet.adjust_heads(maps, labels, base)
        assert set(adjusted) == set(base)
        for key in base:
            assert adjusted[key].equal(base[key])

    def test_latent_bound_only_for_rpn(self, model_cfg):
        """Test c_bar above twice the hidden channels is rejected for RPN heads"""
        with pytest.raises(ValidationError):
            CLNet(model_cfg, CLNetConfig(latent_channels=2 * model_cfg.head_hidden + 1, hidden=16))

    def test_fc_branch_needs_fc_head(self, model_cfg):
        """Test an fc branch on an RPN model is rejected"""
        with pytest.raises(ValidationError):
            CLNet(model_cfg, CLNetConfig(latent_channels=6, hidden=16, branches=('fc',)))


# ==================== PARAMETER COUNT TESTS ====================

class TestParameterCounts:
    """Test suite for closed-form parameter counts"""

    def test_default_per_head_counts(self):
        """Test the default cls and reg branches"""
        model, cfg = BackboneConfig(), CLNetConfig()
        cls_counts = clnet_parameter_count(model, cfg, 'cls')
        reg_counts = clnet_parameter_count(model, cfg, 'reg')
        assert (cls_counts['adjuster'], cls_counts['predictor']) == (66_688, 857_867)
        assert (reg_counts['adjuster'], reg_counts['predictor']) == (198_912, 1_518_357)
        assert cls_counts['fc3'] == 256 * 2571 + 2571

    def test_three_level_total(self):
        """Test three levels total about 7.9M, within 15% of 7.872M"""
        total = clnet_total_parameters(BackboneConfig(levels=3), CLNetConfig())
        assert total == 7_925_472
        assert abs(total - 7.872e6) / 7.872e6 < 0.15

    @pytest.mark.parametrize('augmentation', ['additive', 'cbam', 'film'])
    def test_instantiated_matches_analytic(self, model_cfg, clnet_cfg, augmentation):
        """Test instantiated branches match the closed form"""
        cfg = replace(clnet_cfg, augmentation=augmentation)
        clnet = CLNet(replace(model_cfg, levels=2), cfg)
        for key, branch in clnet.branches.items():
            expected = clnet_parameter_count(model_cfg, cfg, key.split('.')[0])['total']
            assert count_parameters(branch) == expected
        assert count_parameters(clnet) == clnet_total_parameters(replace(model_cfg, levels=2), cfg)

    def test_fc_instantiated_matches_analytic(self, fc_config):
        """Test the similarity-head CLNet matches the closed form"""
        clnet = CLNet(fc_config.model, fc_config.clnet)
        assert count_parameters(clnet) == clnet_total_parameters(fc_config.model, fc_config.clnet)


# ==================== GRADIENT TESTS ====================

class TestGradients:
    """Test suite for gradients through the whole adjustment chain"""

    @pytest.mark.parametrize('branch_name', ['cls', 'reg'])
    def test_gradcheck(self, model_cfg, clnet_cfg, branch_name):
        """Test analytic gradients against central finite differences in double precision"""
        torch.manual_seed(7)
        branch = CLNetBranch(branch_name, model_cfg, replace(clnet_cfg, batch_norm=False)).double()
        size, hidden = 4, model_cfg.head_hidden
        out_dim = model_cfg.head_out(branch_name)
        labels = torch.full((model_cfg.anchors_per_cell * size * size,), -1)
        labels[[0, 7, 21]] = POS
        labels[[3, 12, 30, 44, 59]] = NEG

        M = torch.randn(1, hidden, size, size, dtype=torch.float64, requires_grad=True)
        theta = double_weights(out_dim, hidden, 1)
        matrix = theta.matrix.clone().requires_grad_(True)
        bias = theta.bias.clone().requires_grad_(True)

        def chain(M, matrix, bias):
            weights = HeadWeights(matrix, bias, torch.zeros((), dtype=torch.float64))
            return adjusted_forward(M, branch.adjust(M, labels, weights).weights)

        assert torch.autograd.gradcheck(chain, (M, matrix, bias), eps=1e-6, atol=1e-6, rtol=1e-4)

    def test_loss_gradient_reaches_every_parameter(self, model_cfg, clnet_cfg):
        """Test a scalar loss produces gradients for every CLNet parameter"""
        torch.manual_seed(8)
        branch = CLNetBranch('cls', model_cfg, clnet_cfg).train()
        M = torch.randn(2, model_cfg.head_hidden, 4, 4)
        labels = torch.full((2, model_cfg.anchors_per_cell * 16), -1)
        labels[:, :4], labels[:, 4:20] = POS, NEG
        theta = HeadWeights(torch.randn(10, model_cfg.head_hidden), torch.randn(10), torch.zeros(()))
        loss = adjusted_forward(M, branch.adjust(M, labels, theta).weights).pow(2).mean()
        loss.backward()
        assert all(p.grad is not None for p in branch.parameters())
