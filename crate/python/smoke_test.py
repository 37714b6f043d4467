"""Smoke test for the conformal_amp_py extension.

Build and install first:  maturin develop --release -m crates/python/Cargo.toml
"""

import json
import math

import conformal_amp_py as ca


def main():
    x, y, teacher = ca.generate_synthetic(101, 50, seed=1)
    assert len(x) == 101 and len(x[0]) == 50 and len(teacher) == 50
    x_train, y_train, x_test, y_test = x[:100], y[:100], x[100], y[100]

    ridge = ca.Glm.ridge(1.0)
    fit = ca.amp_fit(x_train, y_train, ridge)
    erm = ca.erm_solve(x_train, y_train, ridge)
    assert fit.converged
    assert max(abs(a - b) for a, b in zip(fit.theta_hat, erm)) < 1e-6

    loo = ca.amp_loo_predictions(x_train, y_train, ridge)
    assert len(loo) == 100

    assert ca.conformal_threshold([3.0, 1.0, 2.0, 5.0, 4.0], 0.2) == 4.0

    taylor = ca.fcp_predict(x_train, y_train, x_test, ridge, kappa=0.1)
    exact = ca.fcp_predict(x_train, y_train, x_test, ridge, kappa=0.1, backend="exact_loo")
    scp = ca.scp_predict(x_train, y_train, x_test, ridge, kappa=0.1, seed=3)
    assert ca.jaccard(taylor, exact) > 0.9
    assert len(scp.intervals) == 1 and scp.length() > 0
    coverage, mean_length, _ = ca.evaluate([taylor, exact], [y_test, y_test])
    assert 0.0 <= coverage <= 1.0 and mean_length > 0

    lo, hi = ca.bayes_interval(x_train, y_train, x_test)
    assert lo < hi

    report = json.loads(
        ca.run_experiment("length", json.dumps({"trials": 5, "data": {"synthetic": {"n": 40, "d": 20}}}))
    )
    assert {m["method"] for m in report["methods"]} == {"taylor_amp", "exact_loo", "scp"}

    try:
        ca.Glm("elastic", 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown regularizer accepted")

    print(
        "smoke test ok: taylor set", [tuple(round(v, 3) for v in iv) for iv in taylor.intervals],
        "length", round(taylor.length(), 3),
        "bayes", (round(lo, 3), round(hi, 3)),
        "jaccard vs exact", round(ca.jaccard(taylor, exact), 4),
    )
    assert not math.isnan(report["methods"][0]["mean_length"])


if __name__ == "__main__":
    main()
