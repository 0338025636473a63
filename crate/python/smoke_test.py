"""Smoke test for the alsfrs extension module.

Build and install first:  maturin develop -m crates/python/Cargo.toml
"""
import math
import sys

import alsfrs


def main():
    assert alsfrs.postprocess(3.6) == 4
    assert alsfrs.postprocess(-2.0) == 0
    rmse, mae, n = alsfrs.compute_metrics([1, 2, 3], [1.0, 2.0, 4.0])
    assert n == 3 and abs(rmse - math.sqrt(1 / 3)) < 1e-12 and abs(mae - 1 / 3) < 1e-12

    adj = alsfrs.by_adjust([0.01, 0.02, 0.04])
    assert all(abs(a - b) < 1e-10 for a, b in zip(adj, [0.055, 0.055, 0.04 * 11 / 6]))
    rho, p = alsfrs.spearman([1, 2, 3, 4, 5], [2, 4, 6, 8, 10])
    assert abs(rho - 1.0) < 1e-12 and p == 0.0

    xs = [[i, (i * 7) % 5] for i in range(20)]
    ys = [1.0 + 2.0 * a - 0.5 * b for a, b in xs]
    intercept, coefs = alsfrs.fit_elastic_net(xs, ys, 0.0, tol=1e-12)
    assert abs(intercept - 1.0) < 1e-6 and abs(coefs[0] - 2.0) < 1e-6 and abs(coefs[1] + 0.5) < 1e-6

    cfg = alsfrs.Config()
    cfg.set("synth.n_patients", "20")
    cfg.set("lambda_count", "4")
    cfg.set("outer_k", "3")
    cfg.set("inner_k", "2")
    assert cfg.get("outer_k") == "3"
    cohort = alsfrs.Cohort.synthetic(cfg)
    assert len(cohort) == 20 and cohort.n_visits > 0

    run = alsfrs.run_pipeline(cohort, cfg)
    rmse, mae, n = run["metrics"]["ALL"]
    assert n > 0 and mae <= rmse
    assert len(run["winners"]) == 12
    assert all(row[-1] in (0.0, 1.0, 2.0, 3.0, 4.0) for row in run["predictions"])
    assert not set(run["train_patients"]) & set(run["holdout_patients"])

    try:
        cfg.set("no_such_key", "1")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown key accepted")

    print(f"smoke test ok: holdout rmse {rmse:.4f} over {n} windows")
    return 0


if __name__ == "__main__":
    sys.exit(main())
