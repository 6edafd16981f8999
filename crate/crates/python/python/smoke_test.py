"""Quick end-to-end exercise of the Python bindings."""

import json
import random

import ipmfair_py as ipm


def main():
    a, b = [0.0, 1.0, 2.0], [0.5, 1.5]
    d = dict(ipm.all_distances(a, b))
    assert abs(d["energy"] - 2 * d["l2"] ** 2) < 1e-12
    assert abs(d["wasserstein1"] - d["l1"]) < 1e-12
    assert ipm.distance(a, a, "kolmogorov") == 0.0

    beta = ipm.beta_bias(0.2, 4)
    assert abs(ipm.expected_ratio(0.2, 4) - 0.2 * (1 + beta)) < 1e-12
    assert ipm.delta_correction(4, 2, 4) == 1.0
    assert ipm.u_stat_mmd([0.0, 1.0], [0.0, 1.0]) < 0.0

    rng = random.Random(0)
    xs, ys, gs = [], [], []
    for _ in range(400):
        g = float(rng.random() < 0.4)
        x = [rng.gauss(0, 1), rng.gauss(0, 1), g]
        xs.append(x)
        ys.append(float(x[0] + 1.5 * g - 0.7 + rng.gauss(0, 0.3) > 0))
        gs.append(g)
    config = {"lambda": 0.5, "target_batch_size": 32, "epochs": 10, "loss": "cross_entropy", "seed": 3}
    model = ipm.Model(3, hidden_width=8, seed=3)
    history = model.fit(xs, ys, gs, json.dumps(config))
    acc, sp = model.evaluate(xs, ys, gs)
    assert history and 0.5 < acc <= 1.0 and 0.0 <= sp <= 1.0

    restored = ipm.Model.from_checkpoint(model.checkpoint())
    assert restored.params == model.params
    assert restored.predict(xs[:5]) == model.predict(xs[:5])

    auc = ipm.tradeoff_auc([(0.0, sp, acc)], "pareto_staircase")
    assert abs(auc - acc * (1 - sp)) < 1e-12

    lines = ipm.check("batching")
    assert lines and all(ok for ok, _ in lines)

    print(f"ok: accuracy {acc:.3f}, unfairness {sp:.3f}, {len(lines)} batching checks passed")


if __name__ == "__main__":
    main()
