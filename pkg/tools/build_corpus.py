"""Regenerate the bundled byte-level training corpus.

The corpus is English technical prose: the Python language reference topics
followed by docstrings of a fixed list of standard-library modules. The output
is committed, so the exact text depends on the interpreter that built it.
"""

import importlib
import inspect
import sys
from pathlib import Path

from pydoc_data.topics import topics

MODULES = [
    "abc", "argparse", "array", "ast", "asyncio", "base64", "bisect", "builtins",
    "calendar", "cmath", "codecs", "collections", "contextlib", "copy", "csv",
    "dataclasses", "datetime", "decimal", "difflib", "email", "enum", "fractions",
    "functools", "gettext", "glob", "gzip", "hashlib", "heapq", "hmac", "html",
    "http.client", "imaplib", "inspect", "io", "ipaddress", "itertools", "json",
    "locale", "logging", "lzma", "mailbox", "math", "mmap", "multiprocessing",
    "numbers", "operator", "optparse", "os", "pathlib", "pickle", "pprint",
    "queue", "random", "re", "sched", "secrets", "selectors", "shelve", "shlex",
    "shutil", "signal", "socket", "sqlite3", "ssl", "statistics", "string",
    "struct", "subprocess", "tarfile", "tempfile", "textwrap", "threading",
    "time", "timeit", "tokenize", "traceback", "types", "typing", "unittest",
    "urllib.parse", "urllib.request", "uuid", "warnings", "weakref", "xml.dom",
    "zipfile", "zlib",
]
TARGET = 1_000_000


def docstrings(name):
    mod = importlib.import_module(name)
    seen = set()
    doc = inspect.getdoc(mod)
    if doc:
        yield doc
    for attr in sorted(vars(mod)):
        if attr.startswith("_"):
            continue
        obj = getattr(mod, attr)
        doc = inspect.getdoc(obj)
        if doc and doc not in seen and len(doc) > 80:
            seen.add(doc)
            yield doc


def main(out):
    parts = [topics[k] for k in sorted(topics)]
    for name in MODULES:
        parts.extend(docstrings(name))
    text = "\n\n".join(parts).encode("utf-8", "replace")[:TARGET]
    Path(out).write_bytes(text)
    print(f"wrote {len(text)} bytes to {out}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "src/layershap/data/corpus.txt")
