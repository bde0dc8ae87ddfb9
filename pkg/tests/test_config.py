import os

import pytest

from basketdemand.config import SECTIONS, SETTING_RULES, RunConfig, check_setting, parse_value
from basketdemand.errors import ConfigError

SHIPPED = os.path.join(os.path.dirname(__file__), '..', 'configuration', 'basketdemand.yml')


def write_yaml(tmp_path, text):
    path = tmp_path / 'run.yml'
    path.write_text(text)
    return str(path)


def test_rule_defaults():
    config = RunConfig()
    assert config.get('simulate:n-draws') == 1000
    assert config.get('proxy:alpha-c') == 0.01
    assert config.get('estimate:cluster-key') == ['store_id', 'quarter']
    assert config.get('counterfactual:phi') == -0.1
    assert set(SECTIONS) == {'run', 'simulate', 'proxy', 'panel', 'estimate', 'counterfactual', 'screen'}


def test_shipped_configuration_loads():
    config = RunConfig.load(SHIPPED)
    assert config.get('counterfactual:stockouts') == ['bacon']
    assert config.get('estimate:alpha-grid') == [[0.0], [0.05], [0.1], [0.2]]
    assert set(config.as_dict()) == set(SETTING_RULES)


def test_resolution_order(tmp_path):
    path = write_yaml(tmp_path, "defaults:\n  run:\n    seed: 7\n  simulate:\n    n-draws: 50\n"
                                "simulate:\n  n-draws: 20\n")
    config = RunConfig.load(path)
    assert config.get('run:seed') == 7
    assert config.get('simulate:n-draws') == 20
    assert RunConfig.load(path, {'simulate:n-draws': 5}).get('simulate:n-draws') == 5


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError, match='does not exist'):
        RunConfig.load(str(tmp_path / 'missing.yml'))
    with pytest.raises(ConfigError, match='unknown setting simulate:n-drawz'):
        RunConfig.load(write_yaml(tmp_path, "simulate:\n  n-drawz: 3\n"))
    with pytest.raises(ConfigError, match='mapping'):
        RunConfig.load(write_yaml(tmp_path, "- 1\n- 2\n"))


@pytest.mark.parametrize('key, value', [('simulate:n-draws', 0),
                                        ('simulate:n-draws', 2.5),
                                        ('simulate:n-draws', 'many'),
                                        ('simulate:phi', 0.5),
                                        ('proxy:normalize', 'yes'),
                                        ('proxy:normalize', 1),
                                        ('proxy:path', 'fast'),
                                        ('estimate:alpha-grid', 'x'),
                                        ('screen:nothing', 1)])
def test_bad_settings(key, value):
    with pytest.raises(ConfigError):
        check_setting(key, value)


def test_setting_coercion():
    assert check_setting('simulate:n-draws', 20.0) == 20
    assert isinstance(check_setting('simulate:n-draws', 20.0), int)
    assert check_setting('simulate:phi', -1) == -1.0
    assert check_setting('run:input', None) == ''


def test_parse_value():
    assert parse_value('200') == 200
    assert parse_value('-0.25') == -0.25
    assert parse_value('true') is True
    assert parse_value('[bacon, milk]') == ['bacon', 'milk']
    assert parse_value('[[0.0], [0.1]]') == [[0.0], [0.1]]
    with pytest.raises(ConfigError):
        parse_value('[unclosed')


def test_digest():
    base = RunConfig()
    assert base.digest() == RunConfig.load(None).digest()
    assert len(base.digest()) == 64
    changed = base.with_overrides({'simulate:n-draws': 10})
    assert changed.digest() != base.digest()
    assert changed.with_overrides({'simulate:n-draws': 1000}).digest() == base.digest()


def test_sections():
    section = RunConfig().section('proxy')
    assert section == {'alpha-c': 0.01, 'alpha-l': 0.01, 'normalize': False, 'format': 'coordinates',
                       'path': 'sparse'}
    with pytest.raises(ConfigError):
        RunConfig().section('plotting')
    with pytest.raises(ConfigError):
        RunConfig().get('plotting:dpi')
