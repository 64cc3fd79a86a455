"""Quick check that the extension imports and its main entry points agree with plain Python."""
import math

import natsel_py as ns


def image(h, w, c, value):
    return ns.Tensor([h, w, c], [value] * (h * w * c))


def main():
    cells = [image(4, 4, 1, v) for v in (0.1, 0.2, 0.3, 0.4)]
    big = ns.stitch(cells, 2, 2)
    assert big.shape == [8, 8, 1]
    assert ns.crop_cell(big, 2, 2, 1, 1).data == cells[3].data
    small = ns.resize(big, 4, 4)
    assert small.shape == [4, 4, 1]
    assert all(0.1 - 1e-12 <= v <= 0.4 + 1e-12 for v in small.data)

    s = ns.normalize_scores([0.2, 0.6])
    assert abs(s[0] - 0.25) < 1e-12
    w = ns.compute_weights([0.25, 0.75], 2.0, -1.0)
    assert w == [1.75, 1.25], w

    counts = ns.longtail_counts(500, 10, 100.0)
    assert counts[0] == 500 and counts[-1] == 5
    probs = ns.class_sampling_probs([4, 1], "srs", 0, 1)
    assert abs(probs[0] - 2 / 3) < 1e-12

    r, slope, intercept = ns.linear_correlation([1, 2, 3], [2, 4, 6])
    assert abs(r - 1) < 1e-12 and abs(slope - 2) < 1e-12 and abs(intercept) < 1e-12
    assert abs(ns.spearman([1, 2, 3], [3, 2, 1]) + 1) < 1e-12
    stats = ns.ns_distribution([0.1, 0.5, 0.9], [0, 0, 0], 2)
    assert stats[1] is None and stats[0]["median"] == 0.5

    model = ns.Classifier(4, 4, 1, 3, hidden=[8], seed=7)
    p = model.predict_proba(cells[0])
    assert abs(sum(p) - 1) < 1e-12
    out = model.ns_scores(cells + cells[:1], [0, 1, 2, 0, 1])
    assert out["inferences"] == 1
    assert out["group"][4] is None
    assert math.isclose(sum(out["score"][:4]), 1.0, abs_tol=1e-12)
    print("smoke test passed")


if __name__ == "__main__":
    main()
