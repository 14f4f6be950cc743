import json
from pathlib import Path

import pytest

from tests.helpers import FIXTURES, write_config


@pytest.fixture
def scripted_config(tmp_path) -> Path:
    """The scripted fixture config with outputs redirected into tmp_path"""
    with open(FIXTURES / "scripted.cfg", "r", encoding="utf-8") as f:
        data = json.load(f)
    data["generator"]["script"] = str(FIXTURES / "script.jsonl")
    data["annotator"]["script"] = str(FIXTURES / "annotator.jsonl")
    data["retriever"]["corpus"] = str(FIXTURES / "corpus.jsonl")
    data["resilience"]["sources"]["static_web"]["web"]["pages"] = str(FIXTURES / "search_pages.jsonl")
    data["output_dir"] = str(tmp_path / "out")
    return write_config(tmp_path / "scripted.cfg", data)
