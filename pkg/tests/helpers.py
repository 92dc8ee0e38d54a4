"""Independent oracles shared by the unit and acceptance tests."""

import numpy as np

from agitrisk.neural import TrainConfig, backward, dropout_mask, forward, init_params, nll_loss

REL_FLOOR = 1e-7  # denominators below this compare absolute error instead


def relative_error(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), REL_FLOOR)


def gradient_check(architecture, layer_norm, seed, n_coords=50, h=1e-5, hidden=5, batch=4, dropout=0.4):
    """Max relative error between BPTT and central differences at random coordinates."""
    rng = np.random.default_rng([seed, 99])
    cfg = TrainConfig(architecture=architecture, hidden=hidden, layer_norm=layer_norm, dropout=dropout, seed=seed)
    params = init_params(cfg)
    # perturb away from the init so every parameter carries signal
    for k in params:
        params[k] = params[k] + rng.normal(0, 0.3, size=params[k].shape)
    X = rng.uniform(-1, 2, size=(batch, 6, 24))
    y = rng.integers(0, 2, size=batch)
    y[0], y[1] = 0, 1
    w = np.array([0.7, 1.9])
    mask = dropout_mask(rng, (batch, cfg.rep_dim), dropout)

    def loss():
        logp, _ = forward(X, params, cfg, "train", mask=mask)
        return nll_loss(logp, y, w)

    _, cache = forward(X, params, cfg, "train", mask=mask)
    grads = backward(cache, y, params, cfg, w)
    sizes = np.array([params[k].size for k in params])
    names = list(params)
    worst = 0.0
    for _ in range(n_coords):
        k = names[rng.choice(len(names), p=sizes / sizes.sum())]
        idx = tuple(int(rng.integers(0, s)) for s in params[k].shape)
        orig = params[k][idx]
        params[k][idx] = orig + h
        up = loss()
        params[k][idx] = orig - h
        down = loss()
        params[k][idx] = orig
        numeric = (up - down) / (2 * h)
        worst = max(worst, float(relative_error(grads[k][idx], numeric)))
    return worst


def trapezoid_auc(scores, labels):
    """ROC AUC by sweeping every distinct threshold and integrating with trapezoids."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    P = np.sum(labels == 1)
    N = np.sum(labels == 0)
    tpr, fpr = [0.0], [0.0]
    for thr in np.unique(scores)[::-1]:
        pred = scores >= thr
        tpr.append(np.sum(pred & (labels == 1)) / P)
        fpr.append(np.sum(pred & (labels == 0)) / N)
    area = 0.0
    for k in range(1, len(tpr)):
        area += (fpr[k] - fpr[k - 1]) * (tpr[k] + tpr[k - 1]) / 2
    return area


def brute_force_metrics(pred, labels):
    tp = fp = fn = tn = 0
    for p, y in zip(pred, labels):
        if p == 1 and y == 1:
            tp += 1
        elif p == 1:
            fp += 1
        elif y == 1:
            fn += 1
        else:
            tn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"tp": tp, "fp": fp, "fn": fn, "tn": tn, "accuracy": (tp + tn) / len(pred),
            "precision": precision, "recall": recall, "f1": f1}
