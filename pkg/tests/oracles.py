"""Independent reference computations used as test oracles."""


def brute_force_auc(scores, labels):
    """Fraction of (positive, negative) pairs ranked correctly; ties count one half."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))


def hand_kappa(tp, fp, tn, fn):
    n = tp + fp + tn + fn
    p_o = (tp + tn) / n
    p_e = ((tp + fp) * (tp + fn) + (tn + fn) * (tn + fp)) / (n * n)
    return 0.0 if p_e == 1.0 else (p_o - p_e) / (1.0 - p_e)


def hand_bacc(tp, fp, tn, fn):
    tpr = tp / (tp + fn) if tp + fn else 0.0
    tnr = tn / (tn + fp) if tn + fp else 0.0
    return (tpr + tnr) / 2.0


def hand_prec(tp, fp, tn, fn):
    return tp / (tp + fp) if tp + fp else 0.0
