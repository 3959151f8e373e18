"""
Unit Tests for Configuration
Presets, INI files, overrides and config hashing
"""

import pytest

from siamadapt.config import BackboneConfig, RunConfig, config_hash, get_config, load_run_config
from siamadapt.utils.errors import ValidationError
from siamadapt.utils.validators import Validator, parse_overrides


# ==================== PRESET TESTS ====================

class TestPresets:
    """Test suite for the built-in presets"""

    def test_default_dimensions(self):
        """Test the default preset builds the full-size core"""
        run_config = load_run_config(env='default')
        assert run_config.model.map_size == 25
        assert run_config.model.anchors_per_cell == 5
        assert run_config.clnet.latent_channels == 128

    def test_testing_dimensions(self, run_config):
        """Test the testing preset sizes"""
        model = run_config.model
        assert (model.template_size, model.search_size, model.map_size) == (12, 24, 13)
        assert model.head_in == 8
        assert run_config.clnet.latent_channels == 6
        assert run_config.training.batch_size == 2
        assert run_config.env == 'testing'

    def test_unknown_preset(self):
        """Test an unknown preset name is rejected"""
        with pytest.raises(ValidationError):
            get_config('production')

    def test_env_variable(self, monkeypatch):
        """Test SIAMADAPT_ENV picks the preset"""
        monkeypatch.setenv('SIAMADAPT_ENV', 'toy')
        assert get_config().__name__ == 'ToyConfig'


# ==================== MERGE TESTS ====================

class TestLoadRunConfig:
    """Test suite for load_run_config"""

    @pytest.fixture
    def ini_file(self, tmp_path):
        path = tmp_path / 'run.ini'
        path.write_text(
            '[tracking]\n'
            'score_threshold = 0.8\n'
            'margin_threshold = 0.1\n'
            '[clnet]\n'
            'augmentation = cbam\n'
            '[run]\n'
            'seed = 9\n',
            encoding='utf-8',
        )
        return path

    def test_file_values(self, ini_file):
        """Test INI values land in their sections"""
        run_config = load_run_config(ini_file, env='testing')
        assert run_config.tracking.score_threshold == 0.8
        assert run_config.clnet.augmentation == 'cbam'
        assert run_config.seed == 9
        assert run_config.model.embed_channels == 8

    def test_precedence(self, ini_file):
        """Test overrides beat the file and the seed argument beats both"""
        run_config = load_run_config(ini_file, env='testing',
                                     overrides={'tracking.score_threshold': '0.7', 'run.seed': '4'})
        assert run_config.tracking.score_threshold == 0.7
        assert run_config.tracking.margin_threshold == 0.1
        assert run_config.seed == 4
        assert load_run_config(ini_file, env='testing', overrides={'run.seed': '4'}, seed=11).seed == 11

    def test_typed_overrides(self):
        """Test text values are parsed to the field types"""
        run_config = load_run_config(env='testing', overrides={
            'training.mining': 'off',
            'model.anchor_ratios': '0.5, 1.0, 2.0',
            'model.anchors_per_cell': '3',
            'tracking.margin_threshold': '-inf',
        })
        assert run_config.training.mining is False
        assert run_config.model.anchor_ratios == (0.5, 1.0, 2.0)
        assert run_config.tracking.margin_threshold == float('-inf')

    def test_unknown_key(self):
        """Test an undeclared key names the offender"""
        with pytest.raises(ValidationError) as exc_info:
            load_run_config(env='testing', overrides={'tracking.threshold': '0.5'})
        assert 'tracking.threshold' in exc_info.value.message

    def test_unknown_section(self, tmp_path):
        """Test an undeclared INI section is rejected"""
        path = tmp_path / 'bad.ini'
        path.write_text('[server]\nport = 1\n', encoding='utf-8')
        with pytest.raises(ValidationError):
            load_run_config(path, env='testing')

    def test_bad_value(self):
        """Test an unparsable value is rejected"""
        with pytest.raises(ValidationError):
            load_run_config(env='testing', overrides={'training.epochs': 'many'})

    def test_key_without_section(self):
        """Test override keys need a section"""
        with pytest.raises(ValidationError):
            load_run_config(env='testing', overrides={'epochs': '3'})

    def test_missing_file(self, tmp_path):
        """Test a missing INI file is reported"""
        with pytest.raises(ValidationError):
            load_run_config(tmp_path / 'absent.ini', env='testing')

    def test_latent_bound(self):
        """Test latent channels above twice the hidden channels are rejected"""
        with pytest.raises(ValidationError) as exc_info:
            load_run_config(env='testing', overrides={'clnet.latent_channels': '17'})
        assert exc_info.value.field == 'clnet.latent_channels'

    def test_invalid_thresholds(self):
        """Test neg_thr must stay below pos_thr"""
        with pytest.raises(ValidationError):
            load_run_config(env='testing', overrides={'tracking.neg_thr': '0.7'})

    def test_anchor_count_mismatch(self):
        """Test anchors_per_cell must equal scales x ratios"""
        with pytest.raises(ValidationError):
            BackboneConfig(anchors_per_cell=4).validate()

    def test_fc_branches(self):
        """Test the fc head only takes the fc branch"""
        with pytest.raises(ValidationError):
            load_run_config(env='testing', overrides={'model.head_type': 'fc', 'model.anchors_per_cell': '1',
                                                      'model.anchor_ratios': '1.0'})


# ==================== HASH TESTS ====================

class TestConfigHash:
    """Test suite for config_hash"""

    def test_stable(self):
        """Test equal configs hash equally"""
        assert config_hash(load_run_config(env='testing')) == config_hash(load_run_config(env='testing'))
        assert len(config_hash(RunConfig())) == 12

    def test_sensitive(self, run_config):
        """Test any field change moves the hash"""
        changed = run_config.with_section('tracking', score_threshold=0.5)
        assert config_hash(changed) != config_hash(run_config)

    def test_sections(self, run_config):
        """Test hashing a subset ignores other sections"""
        changed = run_config.with_section('tracking', score_threshold=0.5)
        assert config_hash(changed, ('model', 'clnet')) == config_hash(run_config, ('model', 'clnet'))


# ==================== OVERRIDE PARSING TESTS ====================

class TestParseOverrides:
    """Test suite for parse_overrides and Validator.parse_value"""

    def test_pairs(self):
        """Test repeated pairs become a dict"""
        assert parse_overrides(['tracking.mode=base', 'run.seed=3']) == {'tracking.mode': 'base', 'run.seed': '3'}

    def test_value_keeps_equals(self):
        """Test only the first '=' splits"""
        assert parse_overrides(['paths.output=a=b']) == {'paths.output': 'a=b'}

    @pytest.mark.parametrize('pair', ['tracking.mode', 'mode=base', 'Tracking.Mode=base'])
    def test_malformed(self, pair):
        """Test malformed pairs are rejected"""
        with pytest.raises(ValidationError):
            parse_overrides([pair])

    def test_parse_value_types(self):
        """Test parsing follows the default's type"""
        assert Validator.parse_value('yes', False, 'x') is True
        assert Validator.parse_value('3', 0, 'x') == 3
        assert Validator.parse_value('none', None, 'x') is None
        assert Validator.parse_value('a b', ('',), 'x') == ('a', 'b')
