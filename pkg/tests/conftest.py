import time

import numpy as np
import pytest

from elseg import tensor as T

# -- acceptance reporting ----------------------------------------------------------
# Tests marked ``@pytest.mark.criterion(n, "title")`` get one summary line each.

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")
    config.addinivalue_line("markers", "slow: long-running training test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    prev = _CRITERIA.get(n, (title, True, 0.0))
    _CRITERIA[n] = (title, prev[1] and rep.passed, prev[2] + rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, secs = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title}  ({secs:.1f} s)")


def direct_conv2d(x, w, b, stride, padding):
    """Loop-by-loop cross-correlation, used as an oracle for tensor.conv2d."""
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    xp = np.zeros((n, cin, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for i in range(n):
        for c in range(cout):
            for y in range(ho):
                for xx in range(wo):
                    patch = xp[i, :, y * stride:y * stride + k, xx * stride:xx * stride + k]
                    out[i, c, y, xx] = b[c] + np.sum(patch * w[c])
    return out


def layer_check(forward, backward, inputs, seed, epsilon=1e-3, tolerance=1e-3):
    """Finite-difference check of one layer through a random linear read-out.

    ``forward(**inputs)`` returns the output; ``backward(upstream, **inputs)``
    returns a dict of gradients keyed like ``inputs``.
    """
    rng = np.random.default_rng(seed + 10_000)
    out = forward(**inputs)
    readout = rng.standard_normal(out.shape)

    def loss_and_grads(p):
        y = forward(**p)
        return float(np.sum(y * readout)), backward(readout, **p)

    return T.finite_difference_check(loss_and_grads, inputs, epsilon, tolerance, floor=1e-6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def e2e_gradcheck(seed, depth=2, width=4, size=16, per_tensor=1, epsilon=1e-6, tolerance=2e-3):
    """Check sampled parameter and input gradients of a whole U-Net in float64.

    Central differences on a ReLU network need a step far smaller than the
    distance to the nearest activation kink, hence float64 and a tiny epsilon.
    """
    from elseg import unet as U

    cfg = U.UNetConfig(in_channels=2, out_channels=3, depth=depth, base_width=width, input_size=size)
    model = U.build_unet(cfg, seed)
    rng = np.random.default_rng(seed)
    params = {k: v.astype(np.float64) for k, v in model.params.items()}
    # non-zero biases so every bias gradient path is exercised
    for k in params:
        if k.endswith(".bias"):
            params[k] = rng.normal(0, 0.1, params[k].shape)
    params["__input__"] = rng.standard_normal((2, 2, size, size))
    targets = (rng.random((2, 3, size, size)) > 0.5).astype(np.float64)
    indices = {k: rng.choice(v.size, size=min(per_tensor, v.size), replace=False) for k, v in params.items()}

    def f(p):
        m = U.UNetModel(cfg, {k: v for k, v in p.items() if k != "__input__"})
        return U.loss_and_grads(m, p["__input__"], targets)

    return T.finite_difference_check(f, params, epsilon, tolerance, indices=indices, floor=1e-6)


def brute_confusion(pred, gt):
    """Per-pixel loop over (C, H, W) masks: lists of (tp, fp, fn, tn) per channel."""
    out = []
    for c in range(pred.shape[0]):
        tp = fp = fn = tn = 0
        for y in range(pred.shape[1]):
            for x in range(pred.shape[2]):
                p, g = bool(pred[c, y, x]), bool(gt[c, y, x])
                if p and g:
                    tp += 1
                elif p:
                    fp += 1
                elif g:
                    fn += 1
                else:
                    tn += 1
        out.append((tp, fp, fn, tn))
    return out


def brute_metrics(tp, fp, fn, tn):
    """Metric formulas written out case by case, empty class scoring 1."""
    if tp + fp + fn == 0:
        return dict(accuracy=1.0, precision=1.0, recall=1.0, dice=1.0, iou=1.0)
    return dict(
        accuracy=(tp + tn) / (tp + fp + fn + tn),
        precision=tp / (tp + fp) if tp + fp else 0.0,
        recall=tp / (tp + fn) if tp + fn else 0.0,
        dice=2 * tp / (2 * tp + fp + fn),
        iou=tp / (tp + fp + fn),
    )


def flood_fill_count(plane, connectivity):
    """Component count by explicit stack-based flood fill."""
    h, w = plane.shape
    seen = np.zeros((h, w), bool)
    if connectivity == 4:
        nbrs = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    else:
        nbrs = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if dy or dx]
    count = 0
    for y in range(h):
        for x in range(w):
            if plane[y, x] and not seen[y, x]:
                count += 1
                stack = [(y, x)]
                seen[y, x] = True
                while stack:
                    cy, cx = stack.pop()
                    for dy, dx in nbrs:
                        ny, nx = cy + dy, cx + dx
                        if 0 <= ny < h and 0 <= nx < w and plane[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            stack.append((ny, nx))
    return count


def random_plane(seed, max_side=32):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(1, max_side + 1, size=2)
    return (rng.random((h, w)) < rng.uniform(0.1, 0.7)).astype(np.uint8)


# -- shared overlap training run ------------------------------------------------------

OVERLAP_EPOCHS = 300
OVERLAP_TARGET_BCE = 0.05


@pytest.fixture(scope="session")
def overlap_run():
    """Depth-2, width-8 U-Net trained on 8 synthetic 64x64 images.

    Every image carries exactly 3 cracks that run across the busbars. The
    full training-set BCE is logged after every epoch of a fixed budget.
    """
    from elseg import data as D, synth as S, train as TR, unet as U

    cfg = S.SynthConfig(image_size=64, crack_count=(3, 3), seed=1)
    samples = [S.generate_sample(cfg, i) for i in range(8)]
    records = [D.make_record(s.name, s.image, s.mask, 64, "synthetic") for s in samples]
    x, t = TR.stack_records(records)
    model = U.build_unet(U.UNetConfig(3, 4, 2, 8, 64), 0)
    tc = TR.TrainConfig(lr=1e-3, batch_size=1, seed=0)
    rng = np.random.default_rng(0)
    opt = TR.Adam(1e-3)
    t0 = time.perf_counter()
    curve = []
    at_target = None  # weights when the training BCE first drops below the target
    for _ in range(OVERLAP_EPOCHS):
        TR.train_epoch(model, (x, t), tc, rng, opt)
        curve.append(TR.dataset_loss(model, x, t))
        if at_target is None and curve[-1] < OVERLAP_TARGET_BCE:
            at_target = model.copy()
    return dict(samples=samples, records=records, x=x, t=t, model=model, curve=curve,
                at_target=at_target, seconds=time.perf_counter() - t0)
