"""Pure-Python level-crossing walk. Reference implementation for ``_adm.pyx``.

Both backends must produce bit-identical output, so the arithmetic below is
mirrored operation-for-operation in the Cython source.
"""
import math

import numpy as np

NO_EVENT_NS = -(2**62)


def adm_walk(x, delta, t0, dt, i0, gain, dead_time, v_track, t_resume, last_ns):
    """Walk the piecewise-linear input ``x`` and emit threshold crossings.

    Segment ``i`` joins ``x[i]`` and ``x[i+1]`` and spans
    ``[t0 + (i0+i)*dt, t0 + (i0+i+1)*dt]``; ``delta[i]`` is its threshold on the
    divided node, so the input-referred step is ``delta[i] / gain``.

    Returns ``(t_ns, polarity, v_track, t_resume, last_ns)`` with the last three
    to be fed back in when the walk continues on the next chunk.
    """
    n = len(delta)
    gap_ns = max(int(math.floor(dead_time * 1e9 + 0.5)), 1)
    out_t = []
    out_p = []
    for i in range(n):
        ta = t0 + (i0 + i) * dt
        tb = t0 + (i0 + i + 1) * dt
        if t_resume >= tb:
            continue
        xa = float(x[i])
        xb = float(x[i + 1])
        slope = (xb - xa) / dt
        step = float(delta[i]) / gain
        ts = ta if t_resume <= ta else t_resume
        while True:
            xs = xa + slope * (ts - ta)
            up = v_track + step
            lo = v_track - step
            if xs > up:
                tc = ts
                pol = 1
            elif xs < lo:
                tc = ts
                pol = -1
            elif slope > 0.0 and xb > up:
                tc = ta + (up - xa) / slope
                pol = 1
            elif slope < 0.0 and xb < lo:
                tc = ta + (lo - xa) / slope
                pol = -1
            else:
                break
            if tc < ts:
                tc = ts
            elif tc > tb:
                tc = tb
            ns = int(math.floor(tc * 1e9 + 0.5))
            if ns < last_ns + gap_ns:
                ns = last_ns + gap_ns
            last_ns = ns
            out_t.append(ns)
            out_p.append(pol)
            v_track = v_track + pol * step
            ts = tc + dead_time
            t_resume = ts
            if ts >= tb:
                break
    return (
        np.asarray(out_t, dtype=np.int64),
        np.asarray(out_p, dtype=np.int8),
        v_track,
        t_resume,
        last_ns,
    )
