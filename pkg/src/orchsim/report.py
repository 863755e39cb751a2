"""The JSON schema that every ``simulate`` report conforms to."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources


@lru_cache(maxsize=1)
def report_schema() -> dict:
    text = resources.files("orchsim").joinpath("report.schema.json").read_text(encoding="utf-8")
    return json.loads(text)
