#!/usr/bin/env python3
"""Validate shipped documents and recorded API bodies against the JSON schemas."""
import argparse
import json
import sys
from pathlib import Path

import jsonschema
from referencing import Registry, Resource


def load(p):
    with open(p) as f:
        return json.load(f)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--root", type=Path, required=True)
    ap.add_argument("--samples", type=Path, required=True)
    args = ap.parse_args()
    schema_dir = args.root / "schema"
    failures = 0

    def check(schema, doc, what):
        nonlocal failures
        errors = list(jsonschema.Draft202012Validator(schema).iter_errors(doc))
        if errors:
            failures += 1
            print(f"FAIL {what}: {errors[0].message} at {list(errors[0].absolute_path)}")

    model = load(schema_dir / "model.schema.json")
    spec = load(schema_dir / "spec.schema.json")
    api = load(schema_dir / "api.schema.json")
    for s in (model, spec, api):
        jsonschema.Draft202012Validator.check_schema(s)

    check(model, load(args.root / "data" / "town.json"), "town.json")
    for f in sorted((args.root / "data").glob("*.ldtl")):
        check(spec, load(f), f.name)

    registry = Registry().with_resource(api["$id"], Resource.from_contents(api))
    samples = load(args.samples)
    counts = {}
    for i, s in enumerate(samples):
        ref = {"$ref": f"{api['$id']}#/$defs/{s['def']}"}
        errors = list(jsonschema.Draft202012Validator(ref, registry=registry).iter_errors(s["body"]))
        counts[s["def"]] = counts.get(s["def"], 0) + 1
        if errors:
            failures += 1
            print(f"FAIL sample {i} ({s['def']}): {errors[0].message} at {list(errors[0].absolute_path)}")

    # a body that breaks the View schema must be rejected
    bad = next(s["body"] for s in samples if s["def"] == "View")
    bad = dict(bad, belief="not a list")
    ref = {"$ref": f"{api['$id']}#/$defs/View"}
    if jsonschema.Draft202012Validator(ref, registry=registry).is_valid(bad):
        failures += 1
        print("FAIL malformed view was accepted")

    print("validated", ", ".join(f"{k} x{v}" for k, v in sorted(counts.items())))
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
