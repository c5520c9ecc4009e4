"""Smoke test for the `dpsu` extension module.

Build and run from the repository root:

    cargo build --release -p dpsu-python --features extension-module
    cp target/release/libdpsu.so python/dpsu.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import dpsu  # noqa: E402


def main():
    c = dpsu.calibrate("policy-laplace", 3.0, math.exp(-10), 1)
    assert abs(c.rho - (1 + (10 - math.log(2)) / 3)) < 1e-9, c
    g = dpsu.calibrate("policy-gaussian", 3.0, 4.54e-5, 100, alpha=5)
    assert g.noise == "gaussian" and g.gamma > g.rho

    assert dpsu.tokenize("Don't panic! see www.example.org", 1) == {"don", "t", "panic", "see"}
    assert dpsu.tokenize("a b c", 2) == {"a b", "b c"}

    h = dpsu.apply_policy("l1-descent", {"a": 0.5}, {"a", "b"}, gamma=1.0, delta0=2)
    assert sum(h.values()) <= 1.5 + 1e-12

    db = dpsu.Database.synth(500, 300, exponent=1.0, seed=7)
    assert len(db) == 500
    report = dpsu.run_dpsu(db, "policy-gaussian", 3.0, 1e-5, 10, alpha=5, seed=42)
    assert report["private"] and report["released_size"] == len(report["released"])
    again = dpsu.run_dpsu(db, "policy-gaussian", 3.0, 1e-5, 10, alpha=5, seed=42)
    assert again == report

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "c.tsv")
        db.write_tsv(path)
        assert dpsu.Database.load(path).to_dict() == db.to_dict()

    stats = dpsu.corpus_stats(db, [20])
    assert stats["n_users"] == 500 and "20" in stats["set_size_percentiles"]

    kan = dpsu.k_anonymity(db, 5, set(report["released"]))
    assert kan["k"] == 5

    small = dpsu.Database({"a": {"x", "y"}, "b": {"x"}, "c": {"y", "z"}})
    sens = dpsu.sensitivity(small, "policy-laplace", 1.0, 1e-5, 2, alpha=1.0)
    assert sens["max_gap"] <= 1 + 1e-9, sens

    verdict = dpsu.audit("l2-descent", trials=500, seed=1)
    assert verdict["failed"] == 0
    assert dpsu.greedy_counterexample(10, 5) == 11.0

    try:
        dpsu.run_dpsu(db, "greedy-demo", 1.0, 1e-5, 2)
    except ValueError as e:
        assert "refused" in str(e)
    else:
        raise AssertionError("greedy-demo should be refused")

    print("smoke test ok:", report["released_size"], "items released")


if __name__ == "__main__":
    main()
