"""Contrastive-decoding dataset synthesis and verification toolkit.

Thin Python layer over the C++ core: the command-line driver, judge-reply
parsing and best-of-N selection, chat-vector arithmetic over checkpoint
files, and the character tokenizer.
"""

from ._core import (
    apply_delta,
    best_of_n,
    commands,
    cosine,
    decode,
    encode,
    extract_delta,
    parse_verdict,
    render_prompt,
    run,
)

__all__ = [
    "apply_delta",
    "best_of_n",
    "commands",
    "cosine",
    "decode",
    "encode",
    "extract_delta",
    "parse_verdict",
    "render_prompt",
    "run",
]
