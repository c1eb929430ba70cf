"""Imports the compiled extension and exercises each entry point.

Point E3IR_EXT at the built library, or leave it unset to use
target/release/libe3ir.so (build with
`cargo build --release -p e3ir-python --features extension-module`).
"""

import importlib.util
import os
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_extension():
    lib = Path(os.environ.get("E3IR_EXT", ROOT / "target" / "release" / "libe3ir.so"))
    if not lib.exists():
        sys.exit(f"extension not found at {lib}")
    staged = Path(tempfile.mkdtemp()) / "e3ir.so"
    shutil.copy(lib, staged)
    spec = importlib.util.spec_from_file_location("e3ir", staged)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def main():
    e3ir = load_extension()

    data = e3ir.generate_synthetic(1200, 4, 2, noise=0.3, seed=1)
    assert len(data) == 1200 and data.num_treatments == 2
    tr, va, te = data.split(seed=1)
    assert len(tr) + len(va) + len(te) == 1200

    cfg = e3ir.TrainConfig(max_iterations=2, batch_size=128, hidden_dims="16", head_dims="8")
    assert "max_iterations = 2" in cfg.to_text()
    model, epochs = e3ir.train(tr, va, cfg)
    assert len(epochs) == 2

    tau_r, tau_c = model.uplift(te.features)
    assert len(tau_r) == len(te) and all(row[0] == 0.0 for row in tau_r)
    assert all(a <= b for row in tau_r for a, b in zip(row, row[1:]))

    metrics = dict(model.evaluate(te, [0.0, 10.0]))
    assert 0.0 <= metrics["mt_aucc"] <= 1.0
    assert metrics["budget.0.spent"] == 0.0

    choices = model.allocate(te.features, 5.0)
    assert len(choices) == len(te)

    picks, objective, spent, optimal = e3ir.solve_mckp(
        [[0, 1, 3], [0, 2, 2.5]], [[0, 1, 2], [0, 1, 3]], 3.0
    )
    assert picks == [2, 1] and abs(objective - 5.0) < 1e-12 and spent == 3.0 and optimal

    binary = e3ir.generate_synthetic(800, 3, 1, seed=2)
    tr_, _, _ = binary.split(seed=2)
    scores = [row[0] for row in tr_.features]
    for f in (e3ir.auuc, e3ir.aucc):
        v = f(scores, tr_.treatments, tr_.costs, tr_.revenues)
        assert 0.0 <= v <= 1.0
    e3ir.qini(scores, tr_.treatments, tr_.costs, tr_.revenues)

    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "m.ckpt"
        model.save(path)
        again = e3ir.Model.load(path)
        assert again.uplift(te.features[:5]) == model.uplift(te.features[:5])

    try:
        e3ir.TrainConfig(learning_rate="fast")
    except ValueError as err:
        assert "learning_rate" in str(err)
    else:
        raise AssertionError("bad config accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
