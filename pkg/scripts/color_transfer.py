"""Meta-train the color hypernetwork on procedural images and evaluate held-out pairs.

Thin wrapper over the ``metaot train-color`` and ``metaot eval-color`` commands;
extra arguments are passed to both.
"""
import sys
from pathlib import Path

from metaot.cli import main as cli


def main(argv):
    out = Path(argv[0]) if argv and not argv[0].startswith("--") else Path("color_run")
    extra = argv[1:] if argv and not argv[0].startswith("--") else argv
    code = cli(["train-color", "--task", "color", "--out", str(out / "model"), *extra])
    if code:
        return code
    return cli(["eval-color", "--task", "color", "--checkpoint", str(out / "model" / "model.motk"),
                "--out", str(out / "eval"), *extra])


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
