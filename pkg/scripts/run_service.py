"""Launch the interactive shared-control session service.

Utility tables come from saved table JSON files (--table name=path,
repeatable); without any the service falls back to a zero table, which is
enough to click through the UI. The built web console is served from
--static when the directory exists.
"""
import argparse
from pathlib import Path

import uvicorn

from codriver.service import create_app


def cli():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--table", action="append", default=[],
                    metavar="NAME=PATH", help="register a saved utility table")
    ap.add_argument("--default-utility", help="table new sessions start with")
    ap.add_argument("--static", default=str(Path(__file__).resolve()
                                            .parents[1] / "frontend" / "dist"))
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=8000)
    args = ap.parse_args()

    tables = {}
    for spec in args.table:
        name, sep, path = spec.partition("=")
        if not sep or not name or not path:
            ap.error(f"--table wants NAME=PATH, got {spec!r}")
        tables[name] = path
    app = create_app(tables=tables, default_utility=args.default_utility,
                     static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port)


if __name__ == "__main__":
    cli()
