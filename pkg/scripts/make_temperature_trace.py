"""Regenerate the packaged hourly temperature trace (synthetic summer month)."""

import argparse

import numpy as np
import pandas as pd


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="src/lagrca/data/temperature.csv")
    ap.add_argument("--days", type=int, default=31)
    ap.add_argument("--seed", type=int, default=20)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    hours = np.arange(args.days * 24)
    # slowly drifting daily mean and amplitude, hourly weather noise
    daily_mean = 17.5 + np.cumsum(rng.normal(0, 0.6, args.days)).clip(-3, 3) * 0.7
    daily_amp = rng.uniform(3.5, 6.0, args.days)
    day = hours // 24
    h = hours % 24
    shape = np.cos(2 * np.pi * (h - 15) / 24)
    noise = np.zeros(len(hours))
    for i in range(1, len(hours)):
        noise[i] = 0.8 * noise[i - 1] + rng.normal(0, 0.25)
    temp = daily_mean[day] + daily_amp[day] * shape + noise
    frame = pd.DataFrame({"hour": hours, "temperature_c": temp.round(2)})
    with open(args.out, "w") as fh:
        fh.write("# synthetic hourly outside temperature, regenerated by scripts/make_temperature_trace.py\n")
        frame.to_csv(fh, index=False)


if __name__ == "__main__":
    main()
