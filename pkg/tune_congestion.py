# scratch harness for calibrating the congestion fixture; not shipped
import numpy as np

from dermarket.fixtures import congestion_case
from dermarket.baselines import run_point_forecast, run_proposed


def line2_profile(case, results):
    rows = []
    for res in results:
        f = res.flows.f_p[(2, res.slot)]
        fq = res.flows.f_q[(2, res.slot)]
        s = (f * f + fq * fq) ** 0.5
        rows.append((res.slot, s, res.flow_violation, res.volt_violation))
    return rows


def subtree_surplus(case):
    subtree = [h.id for h in case.households]
    out = []
    for t in range(24):
        surplus = sum(
            case.realizations[h].pv[t] - case.realizations[h].demand[t]
            for h in subtree
        )
        out.append(surplus)
    return out


def main():
    case = congestion_case(n_quantiles=3)
    cap_kw = case.net.line(2).s_max * 1000 * case.net.base_mva
    print(f"line-2 cap: {cap_kw:.1f} kW")
    print("realized subtree surplus (kW):")
    for t, s in enumerate(subtree_surplus(case)):
        print(f"  t={t:2d} surplus={s:7.2f}")

    pf, da_pf, rt_pf = run_point_forecast(
        case.net, case.households, case.pv_sets, case.de_sets,
        case.tariff, case.realizations,
    )
    print(f"\npoint-forecast: cost={pf.cost:.4f} congested={pf.congested_slots} "
          f"(slots {[r.slot for r in rt_pf if r.flow_violation > 1e-7]}) "
          f"volt={pf.volt_violation_slots} da_k={da_pf.iterations}")
    hh0 = case.households[0].id
    st = da_pf.ess_schedule[hh0]
    print(f"  pf plan {hh0}: charge={np.round(st.charge,2)}")
    print(f"             mode={st.mode.astype(int)}")
    print(f"              soc={np.round(st.soc,1)}")

    prop, da_p, rt_p = run_proposed(
        case.net, case.households, case.pv_sets, case.de_sets,
        case.tariff, case.realizations,
    )
    print(f"\nproposed: cost={prop.cost:.4f} congested={prop.congested_slots} "
          f"(slots {[r.slot for r in rt_p if r.flow_violation > 1e-7]}) "
          f"volt={prop.volt_violation_slots} da_k={da_p.iterations}")
    st = da_p.ess_schedule[hh0]
    print(f"  prop plan {hh0}: charge={np.round(st.charge,2)}")
    print(f"               mode={st.mode.astype(int)}")
    print(f"                soc={np.round(st.soc,1)}")
    print(f"\nprofits: proposed={prop.profit:.4f} point={pf.profit:.4f}")


if __name__ == "__main__":
    main()
