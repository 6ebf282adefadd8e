"""Exhaustive reference evaluator for scripted feedback scenarios.

Re-derives the expected outcome of a feedback round straight from the
environment script by replaying the protocol rules (snapshot set
arithmetic and the sudden-transition filter) independently of the
package implementation.  Only valid for deterministic scenarios
(delivery certain, no scan misses) with victims answering within the
window.  World constants (RSSI model, scanner floor) are mirrored
literally so the comparison isolates the protocol logic.
"""

import math

# Mirrors of the shipped world model constants.
_RSSI_A = -38.0
_RSSI_B = 22.0
_SCANNER_FLOOR = -92.0


def _victim_rssi(device):
    x, y = device.position
    return _RSSI_A - _RSSI_B * math.log10(max(math.hypot(x, y), 0.1))


def _distractor_rssi(device, t):
    track = device.rssi_track
    if t < track[0][0] or t > track[-1][0]:
        return None
    if device.track_shape == "step":
        value = track[0][1]
        for tt, rr in track:
            if tt <= t:
                value = rr
        return value
    for (t0, r0), (t1, r1) in zip(track, track[1:]):
        if t0 <= t <= t1:
            return r0 + (r1 - r0) * (t - t0) / (t1 - t0)
    return track[-1][1]


def _visible(device, t, feedback_sends):
    """rssi if the device would appear in a scan at time t, else None."""
    if device.role == "victim":
        state = False
        for send_t, turn_on in feedback_sends:
            if send_t + device.response_latency_s <= t + 1e-12:
                state = turn_on
        rssi = _victim_rssi(device) if state else None
    else:
        rssi = _distractor_rssi(device, t)
    if rssi is None or rssi < _SCANNER_FLOOR:
        return None
    return rssi


def _keep_candidate(series, delta_db=20.0, ramp_window=3, strong_floor=-65.0):
    """Independent restatement of the sudden-transition rules."""
    sightings = [(i, r) for i, r in enumerate(series) if r is not None]
    if not sightings:
        return False
    prev = None
    for _, r in sightings:
        if prev is not None and abs(r - prev) >= delta_db:
            return True
        prev = r
    n = len(series)
    for i in range(1, n):
        before, here = series[i - 1], series[i]
        if before is None and here is not None and here >= strong_floor:
            window = series[max(0, i - ramp_window):i]
            if not any(v is not None and v < strong_floor for v in window):
                return True
        if before is not None and here is None and before >= strong_floor:
            window = series[i:i + ramp_window]
            if not any(v is not None and v < strong_floor for v in window):
                return True
    return False


def reference_round(script, window_s=10.0):
    """Expected (success, target, dif1, dif2, filtered) for the scenario."""
    w = window_s
    sends = [(0.0, True), (w, False)]  # hotspot-on at t=0, hotspot-off at t=w
    times = [0.0, w, 2.0 * w]
    snapshots = [
        {d.bssid: rssi for d in script.devices
         if (rssi := _visible(d, t, sends)) is not None}
        for t in times
    ]
    l2, l3 = snapshots[1], snapshots[2]
    if set(l2) == set(l3):
        return False, frozenset(), frozenset(), frozenset(), frozenset()
    sends.append((2.0 * w, True))  # second hotspot-on only when the round continues
    l4 = {d.bssid: rssi for d in script.devices
          if (rssi := _visible(d, 3.0 * w, sends)) is not None}
    snapshots.append(l4)
    dif1 = frozenset(set(l2) - set(l3))
    dif2 = frozenset(set(l4) - set(l3))
    target = set()
    filtered = set()
    for bssid in dif1 & dif2:
        series = [snap.get(bssid) for snap in snapshots]
        if _keep_candidate(series):
            target.add(bssid)
        else:
            filtered.add(bssid)
    return bool(target), frozenset(target), dif1, dif2, frozenset(filtered)
