"""Regenerate the linear benchmark definitions in ../.

Car platoons: a lead car plus (n-1) followers with acceleration inputs,
discretised exactly (zero-order hold) at dt = 0.1.  State is
[v0, e1, r1, e2, r2, ...] where v0 is the lead velocity deviation, e_i the
spacing error between car i-1 and car i and r_i = v_{i-1} - v_i.

Helicopter: 14 lightly damped (a few slightly unstable) second-order modes
driven by 6 inputs, discretised at dt = 0.05 from a fixed-seed draw.

Usage: python3 generate.py
"""
import os

import numpy as np
import scipy.linalg as sl

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.dirname(HERE)


def platoon(n, dt=0.1):
    d = 1 + 2 * (n - 1)
    a = np.eye(d)
    b = np.zeros((d, n))
    b[0, 0] = dt
    for i in range(1, n):
        e, r = 2 * i - 1, 2 * i
        a[e, r] = dt
        b[e, i - 1], b[e, i] = dt * dt / 2, -dt * dt / 2
        b[r, i - 1], b[r, i] = dt, -dt
    return a, b


def platoon_safety(n):
    d = 1 + 2 * (n - 1)
    hi = np.zeros(d)
    hi[0] = 2.0
    for i in range(1, n):
        hi[2 * i - 1] = 0.5
        hi[2 * i] = 1.0
    if n == 4:
        hi[2] = 0.35
    return hi


def helicopter(dt=0.05, seed=20):
    rng = np.random.default_rng(seed)
    modes = 14
    ac = np.zeros((28, 28))
    for m in range(modes):
        w = rng.uniform(0.3, 2.0)
        zeta = rng.uniform(-0.02, 0.25)
        i = 2 * m
        ac[i, i + 1] = 1.0
        ac[i + 1, i] = -w * w
        ac[i + 1, i + 1] = -2 * zeta * w
    bc = rng.normal(0.0, 1.0, size=(28, 6)) * 0.5
    # exact ZOH discretisation through the augmented exponential
    aug = np.zeros((34, 34))
    aug[:28, :28] = ac
    aug[:28, 28:] = bc
    e = sl.expm(aug * dt)
    return e[:28, :28], e[:28, 28:]


def fmt_row(row):
    return "[" + ", ".join(repr(float(x)) for x in row) + "]"


def fmt_matrix(m):
    return "[\n" + "".join(f"    {fmt_row(r)},\n" for r in m) + "]"


def write(name, horizon, a, b, init_hw, safe_hw, action_bound, victim_bound, q, r, comment):
    d, k = b.shape
    spec = " & ".join(f"{-float(h)!r} < x{i} & x{i} < {float(h)!r}" for i, h in enumerate(safe_hw))
    with open(os.path.join(OUT, f"{name}.spec"), "w") as f:
        f.write(spec + "\n")
    with open(os.path.join(OUT, f"{name}.toml"), "w") as f:
        f.write(f"# {comment}\n# Generated by tools/generate.py.\n")
        f.write(f'name = "{name}"\nstate_dim = {d}\naction_dim = {k}\nhorizon = {horizon}\n')
        f.write(f"action_bound = {fmt_row([action_bound] * k)}\n")
        if victim_bound is not None:
            f.write(f"victim_action_bound = {fmt_row([victim_bound] * k)}\n")
        f.write("\n")
        f.write("[init_box]\n")
        f.write(f"lower = {fmt_row(-np.asarray(init_hw))}\nupper = {fmt_row(init_hw)}\n\n")
        f.write("[safety_box]\n")
        f.write(f"lower = {fmt_row(-np.asarray(safe_hw))}\nupper = {fmt_row(safe_hw)}\n\n")
        f.write("[lqr_victim]\n")
        f.write(f"q_diag = {fmt_row([q] * d)}\nr_diag = {fmt_row([r] * k)}\n\n")
        f.write('[dynamics]\nkind = "linear"\n')
        f.write(f"a = {fmt_matrix(a)}\nb = {fmt_matrix(b)}\n")


def main():
    for n, horizon in [(4, 1000), (8, 2000)]:
        a, b = platoon(n)
        d = a.shape[0]
        write(
            f"carplatoon{n}",
            horizon,
            a,
            b,
            [0.1] * d,
            platoon_safety(n),
            2.0,
            0.035 if n == 4 else 0.1,
            1.0,
            1.0,
            f"{n}-car platoon, lead velocity deviation then (spacing error, relative velocity) per follower.",
        )
    a, b = helicopter()
    init = [0.002] * 8 + [0.0023] * 20
    safe = [8.0] * 28
    safe[13], safe[14] = 10.0, 9.0
    write("helicopter", 2000, a, b, init, safe, 5.0, None, 1.0, 1.0, "Synthetic 28-state rotorcraft modal model.")


if __name__ == "__main__":
    main()
