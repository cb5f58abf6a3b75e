"""Independent brute-force reference implementations used as test oracles.

Everything here is deliberately written as plain loops over the definitions,
sharing no code path with the library internals it checks.
"""

from __future__ import annotations

import numpy as np

from gapcast.gbdt import GAIN_TIE_RTOL


def oracle_best_split(X, residuals, min_samples_leaf=1, min_gain=0.0):
    """Enumerate every (feature, threshold, default direction) candidate.

    Thresholds are midpoints of consecutive distinct present values; rows
    with the feature missing go to the candidate's default side. Returns the
    first candidate, in (feature, threshold, default-left-first) order, whose
    gain ties the maximum; None when nothing beats min_gain.
    """
    n, d = X.shape
    if n < 2 * min_samples_leaf:
        return None
    r = np.asarray(residuals, dtype=float)
    parent = (r * r).sum() - r.sum() * r.sum() / n
    candidates = []
    for f in range(d):
        col = X[:, f]
        present = ~np.isnan(col)
        vals = np.unique(col[present])
        for a, b in zip(vals, vals[1:]):
            thr = (a + b) / 2.0
            if not thr > a:
                continue  # degenerate midpoint after rounding
            for default_left in (True, False):
                go_left = np.where(present, col < thr, default_left)
                nl = int(go_left.sum())
                nr = n - nl
                if nl < min_samples_leaf or nr < min_samples_leaf:
                    continue
                rl, rr = r[go_left], r[~go_left]
                sse_l = (rl * rl).sum() - rl.sum() * rl.sum() / nl
                sse_r = (rr * rr).sum() - rr.sum() * rr.sum() / nr
                candidates.append((parent - sse_l - sse_r, f, thr, default_left))
    if not candidates:
        return None
    best = max(c[0] for c in candidates)
    if best <= min_gain:
        return None
    cutoff = best - GAIN_TIE_RTOL * max(1.0, abs(best))
    for gain, f, thr, default_left in candidates:
        if gain >= cutoff:
            return f, thr, default_left
    raise AssertionError("unreachable")


def assert_tree_matches_oracle(tree, X, residuals, params):
    """Walk a fitted tree, re-deriving every node's split from the oracle."""
    stack = [(tree, np.arange(len(X)), 0)]
    while stack:
        node, rows, depth = stack.pop()
        sub_r = residuals[rows]
        expected = None
        if depth < params.max_depth:
            expected = oracle_best_split(
                X[rows], sub_r, params.min_samples_leaf, params.min_gain
            )
        if expected is None:
            assert node.is_leaf, f"expected leaf at depth {depth}, rows {rows}"
            assert node.value == sub_r.mean()
            continue
        f, thr, default_left = expected
        assert not node.is_leaf, f"expected split {expected} at depth {depth}"
        assert node.feature == f
        assert node.threshold == thr
        assert node.default_left == default_left
        col = X[rows, f]
        go_left = np.where(np.isnan(col), default_left, col < thr)
        stack.append((node.left, rows[go_left], depth + 1))
        stack.append((node.right, rows[~go_left], depth + 1))


def oracle_candidates(panel, cfg):
    """Literal re-enumeration of window candidates and the filter inputs."""
    pol = [i for i, ch in enumerate(panel.channels) if type(ch).__name__ == "Pollutant"]
    out = []
    t_end = cfg.window_hours
    while t_end <= panel.n_hours - max(cfg.horizons_hours):
        total = 0
        absent = 0
        stations_with_data = 0
        for s in range(panel.n_stations):
            any_present = False
            for c in pol:
                for t in range(t_end - cfg.window_hours, t_end):
                    total += 1
                    if panel.mask[s, c, t]:
                        any_present = True
                    else:
                        absent += 1
            if any_present:
                stations_with_data += 1
        out.append((t_end, absent / total, stations_with_data))
        t_end += cfg.stride_hours
    return out


def oracle_kept_t_ends(panel, cfg, rule="or"):
    """Apply the keep rule and the all-targets-absent drop, literally."""
    aqi_idx = [i for i, ch in enumerate(panel.channels) if type(ch).__name__ == "AqiChannel"]
    assert len(aqi_idx) == 1
    kept = []
    for t_end, gap, stations in oracle_candidates(panel, cfg):
        small = gap <= cfg.max_gap_fraction
        enough = stations > cfg.min_stations_with_data
        keep = (small and enough) if rule == "and" else (small or enough)
        if not keep:
            continue
        any_target = False
        for s in range(panel.n_stations):
            for h in cfg.horizons_hours:
                if panel.mask[s, aqi_idx[0], t_end + h - 1]:
                    any_target = True
        if any_target:
            kept.append(t_end)
    return kept


def oracle_report_cells(values, valid, targets, target_mask, station_cats, horizons):
    """Straightforward per-cell RMSE loops for report verification."""
    n, s, h = values.shape
    cells = {}
    for k in range(h):
        for cat in ("recent_data", "no_recent_data"):
            total = 0.0
            count = 0
            for b in range(n):
                for st in range(s):
                    if station_cats[st] != cat:
                        continue
                    if valid[b, st, k] and target_mask[b, st, k]:
                        total += (values[b, st, k] - targets[b, st, k]) ** 2
                        count += 1
            cells[(horizons[k], cat)] = (
                None if count == 0 else float(np.sqrt(total / count)),
                count,
            )
    return cells
