"""YAML helpers shared by every text artifact.

Floats are written with 17 significant digits (value-exact round trip) and
normalized so the YAML resolver reads them back as floats, not strings.
Key order is preserved on dump, so identical objects give identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from .errors import ParseError


def format_float(value: float) -> str:
    """17-significant-digit decimal form that PyYAML resolves as a float."""
    s = format(float(value), ".17g")
    if "e" in s or "E" in s:
        mantissa, _, exponent = s.partition("e" if "e" in s else "E")
        if "." not in mantissa:
            mantissa += ".0"
        return f"{mantissa}e{exponent}"
    if "." not in s and "inf" not in s and "nan" not in s:
        s += ".0"
    return s


class _Dumper(yaml.SafeDumper):
    pass


def _represent_float(dumper: yaml.SafeDumper, value: float):
    return dumper.represent_scalar("tag:yaml.org,2002:float", format_float(value))


_Dumper.add_representer(float, _represent_float)
for np_type in (np.float16, np.float32, np.float64):
    _Dumper.add_representer(
        np_type, lambda d, v: _represent_float(d, float(v))
    )
for np_int in (np.int8, np.int16, np.int32, np.int64, np.uint8, np.uint32):
    _Dumper.add_representer(
        np_int, lambda d, v: d.represent_int(int(v))
    )


def dump_yaml(obj) -> str:
    return yaml.dump(obj, Dumper=_Dumper, sort_keys=False, default_flow_style=None)


def save_yaml(obj, path: str | Path) -> None:
    Path(path).write_text(dump_yaml(obj), encoding="utf-8")


def load_yaml_text(text: str):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed YAML document: {exc}") from exc


def load_yaml(path: str | Path):
    return load_yaml_text(Path(path).read_text(encoding="utf-8"))


def expect_schema(doc, schema: str) -> None:
    """Fail fast when a document is missing or mismatching its schema tag."""
    if not isinstance(doc, dict) or doc.get("schema") != schema:
        found = doc.get("schema") if isinstance(doc, dict) else type(doc).__name__
        raise ParseError(f"expected schema {schema!r}, found {found!r}")


def write_tsv(path: str | Path, header: list[str], rows: list[list]) -> None:
    """Plain tab-separated table; floats rendered value-exact."""
    def cell(v) -> str:
        if isinstance(v, float):
            return format_float(v)
        return str(v)

    lines = ["\t".join(header)]
    lines.extend("\t".join(cell(v) for v in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
