"""Validate an evaluate report against schema/metrics.schema.json."""
import argparse
import json
import sys

import jsonschema


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("schema")
    parser.add_argument("report")
    args = parser.parse_args()
    with open(args.schema) as f:
        schema = json.load(f)
    with open(args.report) as f:
        report = json.load(f)
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(report), key=lambda e: list(e.path))
    for e in errors:
        print(f"{'/'.join(map(str, e.path)) or '<root>'}: {e.message}", file=sys.stderr)
    if not errors:
        print(f"{args.report}: valid")
    return 1 if errors else 0


if __name__ == "__main__":
    sys.exit(main())
