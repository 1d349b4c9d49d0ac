#!/usr/bin/env python
"""
Pricing a recorded run
======================

A driver covers 20 km in 13 minutes. We fake the GPS log by integrating
a simple accelerate/cruise/brake force schedule, add some position noise
and price the run at two ACC tariffs. The optimiser's trip under the same
tariffs is shown for comparison.
"""
import tempfile
from pathlib import Path

import numpy as np

from rdmm.core import AccDescriptor, GradeProfile, HorizonGrid, Station, Timetable, TrainSpec
from rdmm.dynamics import davis_force, integrate_forward
from rdmm.scenario import load_gps_trace, write_trace
from rdmm.trajectory import PriceFunction, TripDefinition, evaluate_profile_cost, optimize_trip

spec = TrainSpec.acela()
track = (AccDescriptor(1, 0.0, 10_000.0, "west"), AccDescriptor(2, 10_000.0, 20_000.0, "east"))
grade = GradeProfile.flat(0.0, 20_000.0)
trip = TripDefinition("demo", spec, Timetable((Station("A", 0.0, 0.0, 0.0), Station("B", 20_000.0, 0.0, 780.0))),
                      grade, track)

# 45 and 70 $/MWh, in $/J
prices = PriceFunction(HorizonGrid(1, 3600.0, 0.0), np.array([[45.0], [70.0]]) / 3.6e9, track)

# accelerate hard, hold 30 m/s, then brake so the train stops at the platform and waits
knots = np.array([0.0, 75.0, 668.7, 780.0])
forces = np.array([2.3e5, davis_force(spec, 30.0), -1.6e5])
run = integrate_forward(spec, grade, (knots, forces), 0.0, 0.0, 0.1)
print(f"synthetic run ends at x = {run.x[-1]:.0f} m, v = {run.v[-1]:.2f} m/s")

rng = np.random.default_rng(7)
keep = slice(None, None, 10)  # 1 Hz
run.x[keep] = np.minimum(run.x[keep] + rng.normal(0.0, 0.5, run.x[keep].shape), 20_000.0)

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "gps.csv"
    thinned = type(run)(run.t[keep], run.x[keep], run.v[keep], run.a[keep])
    write_trace(thinned, path)
    trace = load_gps_trace(path)

res = evaluate_profile_cost(trace, trip, prices)
print(f"recorded run: ${res.cost:.2f}, {res.energy / 3.6e6:.1f} kWh net, "
      f"{res.clipped} samples above the regen limit")

opt = optimize_trip(trip, prices)
print(f"optimised:    ${opt.cost:.2f}, {opt.energy / 3.6e6:.1f} kWh net")
