from __future__ import annotations

import pytest

from fable.config import load_config, parse_config, settings_from_dict
from fable.errors import ConfigurationError


def test_parse_values_and_comments():
    cfg = parse_config(
        """
        # leading comment
        [retrieval]
        budget = 2048   # trailing comment
        k_doc = 3
        [gateway]
        model = "big-model"
        model.select_docs = small
        backoff = 0.25
        [embedder]
        dimension = 256
        """
    )
    assert cfg["retrieval"] == {"budget": 2048, "k_doc": 3}
    assert cfg["gateway"]["backoff"] == 0.25
    s = settings_from_dict(cfg)
    assert s.retrieval.budget == 2048 and s.retrieval.k_doc == 3
    assert s.gateway.model == "big-model"
    assert s.gateway.model_for("select_docs") == "small"
    assert s.gateway.model_for("structure") == "big-model"
    assert s.embedder.dimension == 256


def test_defaults_when_empty():
    s = settings_from_dict({})
    assert s.retrieval.max_depth == 4 and s.retrieval.budget == 8192 and s.retrieval.k_doc == 5
    assert s.part_size is None


def test_tokenizer_section():
    s = settings_from_dict(parse_config("[tokenizer]\nkind = whitespace\n"))
    assert s.retrieval.make_tokenizer().count("a b  c") == 3


@pytest.mark.parametrize(
    "text",
    [
        "[nonsense]\nx = 1\n",
        "[retrieval]\nbogus = 1\n",
        "budget = 5\n",
        "[retrieval]\njust words\n",
        "[retrieval]\nmax_depth = 1\n",
        "[gateway]\nmodel.dance = m\n",
        "[gateway]\nbackend = pigeon\n",
        "[retrieval]\ntokenizer = whitespace\n",
        "[index]\nsize = 3\n",
    ],
)
def test_bad_configs_are_configuration_errors(text):
    with pytest.raises(ConfigurationError):
        settings_from_dict(parse_config(text))


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "nope.conf")
    p = tmp_path / "ok.conf"
    p.write_text("[index]\npart_size = 12\n")
    assert load_config(p).part_size == 12
