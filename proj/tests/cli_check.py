"""End-to-end checks of the blochspec command line: exit codes, schemas, determinism."""

import argparse
import filecmp
import glob
import json
import os
import subprocess
import sys
import tempfile

import jsonschema

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "data", "configs")
SCHEMAS = os.path.join(ROOT, "schemas")

failures = []


def check(cond, what):
    print(("ok   " if cond else "FAIL ") + what)
    if not cond:
        failures.append(what)


def schema(name):
    with open(os.path.join(SCHEMAS, name + ".schema.json")) as fh:
        return json.load(fh)


def validate(path, name):
    with open(path) as fh:
        doc = json.load(fh)
    try:
        jsonschema.validate(doc, schema(name))
        check(True, f"{os.path.basename(path)} matches {name} schema")
    except jsonschema.ValidationError as e:
        check(False, f"{os.path.basename(path)} matches {name} schema: {e.message} at {list(e.absolute_path)}")
    return doc


def run(binary, *args):
    proc = subprocess.run([binary, *args], capture_output=True, text=True)
    return proc.returncode, proc.stdout, proc.stderr


def first_line(path):
    with open(path) as fh:
        return fh.readline().strip()


def selfcheck(binary, work):
    code, _, err = run(binary, "selfcheck", "--out", os.path.join(work, "sc"))
    check(code == 0, f"selfcheck exits 0 (got {code}) {err.strip()}")
    doc = validate(os.path.join(work, "sc", "selfcheck.json"), "selfcheck")
    check(all(c["pass"] for c in doc["checks"]), "every selfcheck invariant passes")


def kbranch_invalid(binary, work):
    code, _, err = run(binary, "expand", "--config", os.path.join(CONFIGS, "invalid_kbranch.json"), "--out", work)
    check(code == 1, f"K_branch > K/2 exits 1 (got {code})")
    doc = json.loads(err.strip().splitlines()[-1])
    jsonschema.validate(doc, schema("error"))
    check(doc["error"] == "ConfigInvalid", "error kind is ConfigInvalid")
    check("K_branch" in doc["path"], f"error path names K_branch ({doc['path']})")

    bad = os.path.join(work, "unknown_field.json")
    with open(bad, "w") as fh:
        json.dump({"operator": os.path.join(ROOT, "data", "operators", "free_n2.json"), "K": 32, "colour": 1}, fh)
    code, _, err = run(binary, "bands", "--config", bad, "--out", work)
    doc = json.loads(err.strip().splitlines()[-1])
    check(code == 1 and doc["path"] == "/colour", f"unknown field rejected with its path ({doc.get('path')})")

    code, _, err = run(binary, "bands", "--bogus")
    check(code == 1, f"unknown flag exits 1 (got {code})")

    code, _, err = run(binary, "bands", "--out", work)
    check(code == 1 and json.loads(err)["path"] == "--config", "missing --config exits 1")


def singularities(binary, work):
    out = os.path.join(work, "cs")
    code, stdout, err = run(binary, "singularities", "--config", os.path.join(CONFIGS, "constantC_singularities.json"),
                            "--out", out)
    check(code == 0, f"singularities on constantC exits 0 (got {code}) {err.strip()}")
    rep = validate(os.path.join(out, "singularities.json"), "singularities")
    cat = validate(os.path.join(out, "degeneracies.json"), "degeneracies")
    validate(os.path.join(out, "projection_scan.json"), "projection_scan")
    check(len(rep["multiple_eigenvalues"]) >= 1, "constantC has classified multiple eigenvalues")
    check(all(e["class"] == "regular_multiple" for me in rep["multiple_eigenvalues"] for e in me["entries"]),
          "constantC points are regular multiple eigenvalues")
    check(rep["E"] == [] and rep["S"] == [], "constantC has no singular quasimomenta")
    check(all(len(e["A"]) <= 3 * 2 for e in cat["entries"]), "|A_k| <= nm")


def outputs(binary, work):
    for path in sorted(glob.glob(os.path.join(ROOT, "data", "operators", "*.json"))):
        validate(path, "operator")
    for path in sorted(glob.glob(os.path.join(CONFIGS, "*.json"))):
        validate(path, "run_config")

    def go(cmd, config, out):
        code, _, err = run(binary, cmd, "--config", os.path.join(CONFIGS, config), "--out", out)
        check(code == 0, f"{cmd} {config} exits 0 (got {code}) {err.strip()}")

    a = os.path.join(work, "a")
    go("bands", "damped_bands.json", a)
    validate(os.path.join(a, "bands.json"), "bands")
    check(first_line(os.path.join(a, "bands.csv")) == "p,k,j,t,re_lambda,im_lambda,abs_alpha,continuity_flag",
          "band CSV header")
    go("verify-asymptotics", "perturbed_asymptotics.json", a)
    validate(os.path.join(a, "asymptotics.json"), "asymptotics")
    go("oracle-check", "perturbed_oracle.json", a)
    validate(os.path.join(a, "oracle_check.json"), "oracle_check")
    go("expand", "gaussian_expand.json", a)
    validate(os.path.join(a, "expansion.json"), "expansion")
    validate(os.path.join(a, "tail_bound.json"), "tail_bound")
    validate(os.path.join(a, "singularities.json"), "singularities")
    check(first_line(os.path.join(a, "reconstruction.csv")) == "x,component,re_value,im_value",
          "reconstruction CSV header")

    # byte-identical reruns
    b = os.path.join(work, "b")
    go("bands", "damped_bands.json", b)
    go("expand", "gaussian_expand.json", b)
    for name in ["bands.csv", "bands.json", "expansion.json", "reconstruction.csv", "singularities.json",
                 "tail_bound.json"]:
        check(filecmp.cmp(os.path.join(a, name), os.path.join(b, name), shallow=False), f"{name} is reproducible")

    # a different seed changes only the randomized outputs
    c = os.path.join(work, "c")
    code, _, _ = run(binary, "expand", "--config", os.path.join(CONFIGS, "gaussian_expand.json"), "--out", c,
                     "--seed", "7")
    with open(os.path.join(c, "tail_bound.json")) as fh:
        check(json.load(fh)["seed"] == 7, "--seed reaches the randomized scans")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("binary")
    ap.add_argument("mode", choices=["selfcheck", "kbranch", "singularities", "outputs"])
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as work:
        {"selfcheck": selfcheck, "kbranch": kbranch_invalid, "singularities": singularities,
         "outputs": outputs}[args.mode](args.binary, work)
    if failures:
        print(f"{len(failures)} check(s) failed")
        sys.exit(1)


if __name__ == "__main__":
    main()
