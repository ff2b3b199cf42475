"""Hand-lowered `.mir` programs used by tests, the acceptance suite and the CLI docs."""

from importlib import resources

from ..text import parse_module

NAMES = ("to_upper", "paired_adds", "score_gate", "arith", "safe_div", "arrays", "nested")


def path(name: str):
    return resources.files(__name__).joinpath(f"{name}.mir")


def text(name: str) -> str:
    return path(name).read_text(encoding="utf-8")


def load(name: str):
    return parse_module(text(name))
