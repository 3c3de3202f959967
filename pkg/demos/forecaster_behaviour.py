"""Show smoothing, firing power and alarm verdicts on a hand-made likelihood trace.

The trace sits at 0.2 with a rise to 0.9 from 15 to 2 minutes before a
seizure. With X = 10 min (SPH 5 min, SOP 5 min) the alarm fires about 9.5
minutes ahead, so the onset falls inside its occurrence period. A 3 minute
blip earlier on never fills half of the firing-power window.

Run with ``python demos/forecaster_behaviour.py``.
"""
import numpy as np

from eegrisk.evaluation import classify_alarms
from eegrisk.forecast import ForecastParams, run_forecaster


def main():
    onset = 3600.0
    t = np.arange(int(onset))
    raw = np.full(len(t), 0.2)
    raw[(t >= onset - 15 * 60) & (t < onset - 2 * 60)] = 0.9
    raw[(t >= 600) & (t < 780)] = 0.9

    params = ForecastParams(Z=0.5, Y=0.5, X_min=10)
    timeline, alarms = run_forecaster(raw, params)
    for minute in (10, 12, 13, 20, 45, 48, 50, 51, 55, 59):
        i = minute * 60
        print(f"t={minute:3d} min  raw={timeline.raw_p[i]:.2f}  smoothed={timeline.smoothed[i]:.3f}  "
              f"firing power={timeline.fp[i]:.3f}")
    verdicts = classify_alarms(alarms, [onset])
    for a in verdicts.alarms:
        print(f"alarm at {a.t_alarm_s / 60:.2f} min, SOP {a.sop_start_s / 60:.2f}-{a.sop_end_s / 60:.2f} min: {a.verdict}")
    print(f"predicted: {verdicts.predicted}, false alarms: {verdicts.false_alarms}")


if __name__ == "__main__":
    main()
