# Pilot sweep: learning rate / ball radius / step for the presets (scratch tool).
import sys
import numpy as np
from dataclasses import replace
from cnnadapt import preset, run_scenario, rmse
from cnnadapt.controller import ControllerParams


def run_case(name, gamma, dt=None, tb=10.0, seed=0, t_end=10.0, gconv=None):
    sc = preset(name)
    p = sc.controller
    params = ControllerParams(
        k_s=p.k_s, A_c=p.A_c, gamma_fc=gamma,
        gamma_conv=gamma if gconv is None else gconv,
        rho=p.rho, theta_bar=tb,
    )
    sim = replace(sc.sim, t_end=t_end)
    if dt is not None:
        sim = replace(sim, dt=dt)
    sc = sc.with_overrides(controller=params, sim=sim)
    r = run_scenario(sc, seed=seed)
    emax = float(np.max(np.linalg.norm(r.e, axis=1))) if r.e.size else float("nan")
    label = f"g={gamma:.1e}" + ("" if gconv is None else f"/gc={gconv:.1e}")
    if r.diverged:
        return (f"{name} {label} dt={sc.sim.dt:.2e} tb={tb:g} s{seed}: "
                f"DIVERGED at {r.diverged_at:.3f} emax={emax:.1f}")
    late = rmse(r.e, r.t, (max(0.0, t_end - 2.0), t_end))
    post = ""
    if r.post_change_rmse is not None:
        post = f" post=({r.post_change_rmse[0]:.4f},{r.post_change_rmse[1]:.4f})"
    return (f"{name} {label} dt={sc.sim.dt:.2e} tb={tb:g} s{seed}: "
            f"rmse=({r.rmse[0]:.4f},{r.rmse[1]:.4f}){post} "
            f"late=({late[0]:.5f},{late[1]:.5f}) "
            f"thmax={r.theta_norm_max_full:.2f} jmax={r.phi_prime_max_full:.1f} "
            f"emax={emax:.2f}")


if __name__ == "__main__":
    for arg in sys.argv[1:]:
        parts = arg.split(":")
        name = parts[0]
        gamma = float(parts[1])
        dt = float(parts[2]) if len(parts) > 2 and parts[2] else None
        tb = float(parts[3]) if len(parts) > 3 and parts[3] else 10.0
        seed = int(parts[4]) if len(parts) > 4 else 0
        gconv = float(parts[5]) if len(parts) > 5 and parts[5] else None
        print(run_case(name, gamma, dt, tb, seed, gconv=gconv), flush=True)
