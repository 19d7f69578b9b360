"""Write the synthetic bundled dataset.

The eleven-zone grid and the seven-bus feeder are invented at desk scale.
They imitate the shape of a New York style system (large upstate hydro and
nuclear, gas-heavy city zones, oil peakers on the feeder) but none of the
numbers are measurements.

Run from this directory: python3 generate.py
"""

import csv
import json

import numpy as np

ZONES = [
    "West", "Genesee", "Central", "North", "Mohawk Valley", "Capital",
    "Hudson Valley", "Millwood", "Dunwoody", "New York City", "Long Island",
]

# (from, to, reactance p.u., limit MW)
LINES = [
    (1, 2, 0.020, 2500), (2, 3, 0.020, 2500), (3, 5, 0.020, 3000),
    (4, 5, 0.030, 1500), (5, 6, 0.020, 3000), (5, 7, 0.030, 2000),
    (6, 7, 0.020, 3500), (7, 8, 0.015, 4000), (8, 9, 0.010, 4500),
    (9, 10, 0.010, 4000), (9, 11, 0.020, 1200), (10, 11, 0.030, 600),
]

# (name, bus, fuel, $/MWh, MW)
GENERATORS = [
    ("hydro_A", 1, "hydro", 5.0, 2600), ("gas_A", 1, "gas", 45.0, 1200),
    ("nuclear_B", 2, "nuclear", 10.0, 1400), ("gas_B", 2, "gas", 50.0, 500),
    ("nuclear_C", 3, "nuclear", 10.0, 3300), ("gas_C", 3, "gas", 40.0, 2400),
    ("hydro_D", 4, "hydro", 6.0, 1700), ("wind_D", 4, "wind", 1.0, 1700),
    ("gas_E", 5, "gas", 42.0, 1100), ("gas_F", 6, "gas", 35.0, 4200),
    ("gas_G", 7, "gas", 38.0, 2500), ("oil_G", 7, "oil", 110.0, 800),
    ("nuclear_H", 8, "nuclear", 11.0, 700), ("gas_I", 9, "gas", 55.0, 600),
    ("gas_J", 10, "gas", 48.0, 6500), ("steam_J", 10, "oil", 70.0, 2600),
    ("peaker_J", 10, "oil", 140.0, 1200), ("gas_K", 11, "gas", 46.0, 3000),
    ("peaker_K", 11, "oil", 135.0, 1290),
]

# share of the wholesale load per zone
LOAD_SHARE = [0.08, 0.07, 0.085, 0.025, 0.045, 0.07, 0.07, 0.01, 0.02, 0.37, 0.155]

# interface links: (transmission bus, feeder bus, MW)
LINKS = [(10, 1, 400.0), (11, 1, 250.0), (11, 6, 250.0)]

# feeder: (parent, child, r p.u., x p.u., MVA)
FEEDERS = [
    (1, 2, 0.0005, 0.001, 900.0), (2, 3, 0.0005, 0.001, 800.0),
    (3, 4, 0.0005, 0.001, 800.0), (1, 5, 0.0005, 0.001, 600.0),
    (5, 6, 0.0005, 0.001, 600.0), (6, 7, 0.0005, 0.001, 500.0),
]
DIST_LOAD_SHARE = [0.0, 0.2, 0.15, 0.2, 0.15, 0.1, 0.2]

# per-unit load shape over a representative day
SHAPE = np.array([
    0.58, 0.55, 0.53, 0.52, 0.53, 0.57, 0.64, 0.72, 0.80, 0.86, 0.90, 0.93,
    0.95, 0.97, 0.98, 0.99, 1.00, 1.00, 0.98, 0.95, 0.90, 0.82, 0.73, 0.65,
])

# season: (wholesale peak MW, feeder peak MW)
SEASONS = {
    "winter": (24500.0, 1200.0),
    "spring": (20000.0, 1000.0),
    "summer": (30000.0, 1300.0),
    "fall": (21000.0, 1050.0),
}

# peak and off-peak time-of-use rates, $/MWh
TARIFF_PEAK, TARIFF_NIGHT, PEAK_START = 219.7, 15.5, 8

# Mean of the historical feeder prices: a few $/MWh above the city-gate
# price by day, below the strategic unit's cost at night.
HISTORY_DAY, HISTORY_NIGHT = 52.0, 25.0
HISTORY_SIGMA = 5.65
HISTORY_SAMPLES = 60
SEED = 20240601


def transmission():
    return {
        "name": "eleven-zone synthetic grid",
        "base_mva": 100.0,
        "buses": [{"id": i + 1, "name": z} for i, z in enumerate(ZONES)],
        "lines": [{"from": a, "to": b, "x": x, "f_max": f} for a, b, x, f in LINES],
        "generators": [
            {"name": n, "bus": b, "fuel": fu, "cost": c, "g_min": 0.0, "g_max": float(g)}
            for n, b, fu, c, g in GENERATORS
        ],
        "interfaces": [{"trans_bus": t, "dist_bus": d, "f_max": f} for t, d, f in LINKS],
    }


def distribution():
    return {
        "name": "seven-bus synthetic urban feeder",
        "base_mva": 100.0,
        "root": 1,
        "buses": [{"id": i, "u_min": 0.9025, "u_max": 1.1025} for i in range(1, 8)],
        "feeders": [{"from": a, "to": b, "r": r, "x": x, "s_max": s} for a, b, r, x, s in FEEDERS],
        "generators": [
            {"name": "oil_3", "bus": 3, "cost": 120.0, "p_min": 0.0, "p_max": 300.0, "q_min": -150.0, "q_max": 150.0},
            {"name": "oil_7", "bus": 7, "cost": 150.0, "p_min": 0.0, "p_max": 250.0, "q_min": -125.0, "q_max": 125.0},
        ],
        "strategic": [
            {"name": "gas_r", "trans_bus": 10, "dist_bus": 4, "cost": 30.0, "g_min": 0.0, "g_max": 716.0}
        ],
    }


def write_demand(path, peak, shares):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bus", "hour", "mw"])
        for b, share in enumerate(shares, start=1):
            for t, s in enumerate(SHAPE):
                w.writerow([b, t, f"{peak * share * s:.3f}"])


def main():
    with open("nyiso11.json", "w") as fh:
        json.dump(transmission(), fh, indent=2)
        fh.write("\n")
    with open("manhattan7.json", "w") as fh:
        json.dump(distribution(), fh, indent=2)
        fh.write("\n")
    for season, (wm_peak, dm_peak) in SEASONS.items():
        write_demand(f"demand_wm_{season}.csv", wm_peak, LOAD_SHARE)
        write_demand(f"demand_dm_{season}.csv", dm_peak, DIST_LOAD_SHARE)
    with open("tariff.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hour", "price"])
        for t in range(24):
            w.writerow([t, TARIFF_PEAK if t >= PEAK_START else TARIFF_NIGHT])
    rng = np.random.default_rng(SEED)
    with open("dlmp_history.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bus", "hour", "price"])
        for b in range(1, 8):
            for t in range(24):
                mean = HISTORY_DAY if t >= PEAK_START else HISTORY_NIGHT
                z = rng.standard_normal(HISTORY_SAMPLES)
                z = (z - z.mean()) / z.std(ddof=1)
                for v in mean + HISTORY_SIGMA * z:
                    w.writerow([b, t, f"{v:.6f}"])


if __name__ == "__main__":
    main()
