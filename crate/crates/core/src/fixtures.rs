//! Bundled study cases.
//!
//! Every case is generated from code; the JSON copies under `fixtures/` are
//! produced by `varplan gen-fixture` and checked against these generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::network::{
    Branch, Bus, Case, EquipmentCatalog, Module, ModuleKind, Network, Scenario, VarCandidate,
};

/// Shunt equipment prices in kUS$: capacitors of 5/10/15 Mvar, reactors of
/// 15/60 Mvar and a connection bay.
pub fn standard_catalog() -> EquipmentCatalog {
    let m = |kind, size, cost| Module { kind, size, cost };
    EquipmentCatalog {
        modules: vec![
            m(ModuleKind::Capacitor, 5.0, 313.0),
            m(ModuleKind::Capacitor, 10.0, 362.0),
            m(ModuleKind::Capacitor, 15.0, 418.0),
            m(ModuleKind::Reactor, 15.0, 1810.0),
            m(ModuleKind::Reactor, 60.0, 2171.0),
        ],
        bay_cost: 3217.0,
    }
}

/// Candidate priced at the catalog's cheapest cost per Mvar.
pub fn catalog_candidate(catalog: &EquipmentCatalog, bus: usize, max_mvar: f64) -> VarCandidate {
    VarCandidate {
        bus,
        cost_reactor: catalog.cheapest_unit_cost(ModuleKind::Reactor).expect("reactor in catalog"),
        cost_capacitor: catalog.cheapest_unit_cost(ModuleKind::Capacitor).expect("capacitor in catalog"),
        max_mvar,
    }
}

fn bus(id: usize, v_min: f64, v_max: f64, slack: bool) -> Bus {
    Bus { id, name: format!("bus{id}"), v_min, v_max, is_slack: slack }
}

fn line(id: usize, from: usize, to: usize, r: f64, x: f64, charging: f64, s_max_mva: f64, base: f64) -> Branch {
    let d = r * r + x * x;
    Branch {
        id,
        from_bus: from,
        to_bus: to,
        g: r / d,
        b: -x / d,
        charging,
        s_max: s_max_mva / base,
        tap_min: 1.0,
        tap_max: 1.0,
        phase_min: 0.0,
        phase_max: 0.0,
    }
}

/// Scenario from per-bus MW/Mvar arrays.
fn scenario(id: &str, probability: f64, base: f64, rows: &[[f64; 5]]) -> Scenario {
    let col = |c: usize| rows.iter().map(|r| r[c] / base).collect::<Vec<_>>();
    Scenario {
        id: id.into(),
        probability,
        p_gen: col(0),
        p_dem: col(1),
        q_dem: col(2),
        q_gen_min: col(3),
        q_gen_max: col(4),
        p_slack_min: f64::NEG_INFINITY,
        p_slack_max: f64::INFINITY,
    }
}

/// Mvar cap of the single candidate in [`two_bus`].
pub const TWO_BUS_CAP: f64 = 155.0;

/// A slack bus feeding one load bus whose voltage needs capacitor support:
/// about 150 Mvar in the first scenario and 50 Mvar in the second.
pub fn two_bus() -> Case {
    two_bus_with([206.0, 106.0], TWO_BUS_CAP)
}

/// [`two_bus`] with explicit reactive loads (Mvar) and candidate cap.
pub fn two_bus_with(q_dem: [f64; 2], cap: f64) -> Case {
    let base = 100.0;
    let catalog = standard_catalog();
    let network = Network {
        buses: vec![bus(1, 0.95, 1.05, true), bus(2, 0.95, 1.05, false)],
        branches: vec![line(1, 1, 2, 0.01, 0.1, 0.0, 1000.0, base)],
        candidates: vec![catalog_candidate(&catalog, 2, cap)],
        base_mva: base,
    };
    let scenarios = q_dem
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            scenario(
                &format!("s{}", i + 1),
                0.5,
                base,
                &[[200.0, 0.0, 0.0, -500.0, 500.0], [0.0, 200.0, q, 0.0, 0.0]],
            )
        })
        .collect();
    Case { network, scenarios, catalog }
}

/// Slack bus 1, generator bus 2 and load bus 3 on a meshed triangle with a
/// tap-changing transformer between 2 and 3. Every bus is a candidate; only
/// bus 3 needs support.
pub fn three_bus() -> Case {
    let base = 100.0;
    let catalog = standard_catalog();
    let mut tx = line(2, 2, 3, 0.005, 0.08, 0.0, 500.0, base);
    tx.tap_min = 0.95;
    tx.tap_max = 1.05;
    let network = Network {
        buses: vec![
            bus(1, 0.95, 1.05, true),
            bus(2, 0.95, 1.05, false),
            bus(3, 0.95, 1.05, false),
        ],
        branches: vec![
            line(1, 1, 2, 0.01, 0.1, 0.02, 500.0, base),
            tx,
            line(3, 1, 3, 0.02, 0.25, 0.02, 500.0, base),
        ],
        candidates: (1..=3).map(|b| catalog_candidate(&catalog, b, 300.0)).collect(),
        base_mva: base,
    };
    let scenarios = vec![
        scenario(
            "peak",
            0.5,
            base,
            &[
                [150.0, 0.0, 0.0, -300.0, 300.0],
                [120.0, 0.0, 0.0, -30.0, 30.0],
                [0.0, 260.0, 260.0, 0.0, 0.0],
            ],
        ),
        scenario(
            "shoulder",
            0.5,
            base,
            &[
                [100.0, 0.0, 0.0, -300.0, 300.0],
                [80.0, 0.0, 0.0, -30.0, 30.0],
                [0.0, 170.0, 150.0, 0.0, 0.0],
            ],
        ),
    ];
    Case { network, scenarios, catalog }
}

/// Two buses with both voltages pinned at 1 pu, so each scenario's var need
/// is a constant and the planning problem reduces to a linear program in
/// the investments. Voltage bands are degenerate, so this case is built in
/// code only and never passes [`validate`](crate::network::validate).
pub fn fixed_voltage_two_bus() -> Case {
    let base = 100.0;
    let catalog = standard_catalog();
    let network = Network {
        buses: vec![bus(1, 1.0, 1.0, true), bus(2, 1.0, 1.0, false)],
        branches: vec![line(1, 1, 2, 0.01, 0.1, 0.0, 1000.0, base)],
        candidates: vec![catalog_candidate(&catalog, 2, 200.0)],
        base_mva: base,
    };
    let scenarios = [(0.5, 80.0), (0.3, 40.0), (0.2, 20.0)]
        .iter()
        .enumerate()
        .map(|(i, &(pr, q))| {
            scenario(
                &format!("s{}", i + 1),
                pr,
                base,
                &[[100.0, 0.0, 0.0, -500.0, 500.0], [0.0, 100.0, q, 0.0, 0.0]],
            )
        })
        .collect();
    Case { network, scenarios, catalog }
}

/// Reactive need (Mvar) of each scenario of [`fixed_voltage_two_bus`]: the
/// load minus what the line delivers at the pinned voltages.
pub fn fixed_voltage_needs(case: &Case) -> Vec<f64> {
    let br = &case.network.branches[0];
    case.scenarios
        .iter()
        .map(|sc| {
            // Receiving-end flow with |V| = 1 at both ends: solve the P
            // balance for the angle, then read off Q.
            let p = sc.p_dem[1];
            let (g, b) = (br.g, br.b);
            // p_to = g − (g cos d − b sin d) with d = θ1 − θ2 > 0 means
            // power arrives; the received power is −p_to.
            let mut d: f64 = 0.1;
            for _ in 0..100 {
                let f = -(g - (g * d.cos() - b * d.sin())) - p;
                let df = -(g * d.sin() + b * d.cos());
                d -= f / df;
            }
            let q_to = -(b + 0.5 * br.charging) + (g * d.sin() + b * d.cos());
            (sc.q_dem[1] + q_to) * case.network.base_mva
        })
        .collect()
}

// IEEE RTS-24: (from, to, r, x, charging, MVA rating); transformers follow.
const RTS_LINES: [(usize, usize, f64, f64, f64, f64); 33] = [
    (1, 2, 0.0026, 0.0139, 0.4611, 175.0),
    (1, 3, 0.0546, 0.2112, 0.0572, 175.0),
    (1, 5, 0.0218, 0.0845, 0.0229, 175.0),
    (2, 4, 0.0328, 0.1267, 0.0343, 175.0),
    (2, 6, 0.0497, 0.1920, 0.0520, 175.0),
    (3, 9, 0.0308, 0.1190, 0.0322, 175.0),
    (4, 9, 0.0268, 0.1037, 0.0281, 175.0),
    (5, 10, 0.0228, 0.0883, 0.0239, 175.0),
    (6, 10, 0.0139, 0.0605, 2.4590, 175.0),
    (7, 8, 0.0159, 0.0614, 0.0166, 175.0),
    (8, 9, 0.0427, 0.1651, 0.0447, 175.0),
    (8, 10, 0.0427, 0.1651, 0.0447, 175.0),
    (11, 13, 0.0061, 0.0476, 0.0999, 500.0),
    (11, 14, 0.0054, 0.0418, 0.0879, 500.0),
    (12, 13, 0.0061, 0.0476, 0.0999, 500.0),
    (12, 23, 0.0124, 0.0966, 0.2030, 500.0),
    (13, 23, 0.0111, 0.0865, 0.1818, 500.0),
    (14, 16, 0.0050, 0.0389, 0.0818, 500.0),
    (15, 16, 0.0022, 0.0173, 0.0364, 500.0),
    (15, 21, 0.0063, 0.0490, 0.1030, 500.0),
    (15, 21, 0.0063, 0.0490, 0.1030, 500.0),
    (15, 24, 0.0067, 0.0519, 0.1091, 500.0),
    (16, 17, 0.0033, 0.0259, 0.0545, 500.0),
    (16, 19, 0.0030, 0.0231, 0.0485, 500.0),
    (17, 18, 0.0018, 0.0144, 0.0303, 500.0),
    (17, 22, 0.0135, 0.1053, 0.2212, 500.0),
    (18, 21, 0.0033, 0.0259, 0.0545, 500.0),
    (18, 21, 0.0033, 0.0259, 0.0545, 500.0),
    (19, 20, 0.0051, 0.0396, 0.0833, 500.0),
    (19, 20, 0.0051, 0.0396, 0.0833, 500.0),
    (20, 23, 0.0028, 0.0216, 0.0455, 500.0),
    (20, 23, 0.0028, 0.0216, 0.0455, 500.0),
    (21, 22, 0.0087, 0.0678, 0.1424, 500.0),
];

const RTS_TRANSFORMERS: [(usize, usize, f64, f64, f64); 5] = [
    (3, 24, 0.0023, 0.0839, 400.0),
    (9, 11, 0.0023, 0.0839, 400.0),
    (9, 12, 0.0023, 0.0839, 400.0),
    (10, 11, 0.0023, 0.0839, 400.0),
    (10, 12, 0.0023, 0.0839, 400.0),
];

/// Lines doubled to reach the 50-line, 7-transformer synthetic topology.
const EXTRA_LINES: [usize; 17] = [0, 1, 2, 3, 4, 5, 6, 7, 9, 10, 11, 12, 13, 15, 16, 17, 22];

/// Peak (MW, Mvar) per bus.
const RTS_LOAD: [(f64, f64); 24] = [
    (108.0, 22.0),
    (97.0, 20.0),
    (180.0, 37.0),
    (74.0, 15.0),
    (71.0, 14.0),
    (136.0, 28.0),
    (125.0, 25.0),
    (171.0, 35.0),
    (175.0, 36.0),
    (195.0, 40.0),
    (0.0, 0.0),
    (0.0, 0.0),
    (265.0, 54.0),
    (194.0, 39.0),
    (317.0, 64.0),
    (100.0, 20.0),
    (0.0, 0.0),
    (333.0, 68.0),
    (181.0, 37.0),
    (128.0, 26.0),
    (0.0, 0.0),
    (0.0, 0.0),
    (0.0, 0.0),
    (0.0, 0.0),
];

/// (bus, P max MW, Q min Mvar, Q max Mvar) per generating bus.
const RTS_GEN: [(usize, f64, f64, f64); 11] = [
    (1, 192.0, -50.0, 80.0),
    (2, 192.0, -50.0, 80.0),
    (7, 300.0, 0.0, 180.0),
    (13, 591.0, 0.0, 240.0),
    (14, 0.0, -50.0, 200.0),
    (15, 215.0, -50.0, 110.0),
    (16, 155.0, -50.0, 80.0),
    (18, 400.0, -50.0, 200.0),
    (21, 400.0, -50.0, 200.0),
    (22, 300.0, -60.0, 96.0),
    (23, 660.0, -125.0, 310.0),
];

pub const IEEE24_SLACK: usize = 13;
pub const IEEE24_SEED: u64 = 24;
pub const IEEE24_SCENARIOS: usize = 5;
pub const IEEE24_MAX_MVAR: f64 = 500.0;

/// The synthetic RTS-24 study with the default seed.
pub fn ieee24() -> Case {
    ieee24_with_seed(IEEE24_SEED, IEEE24_SCENARIOS)
}

/// RTS-24 topology with 50 lines, 7 transformers (one of them a phase
/// shifter) and `count` random operating scenarios.
pub fn ieee24_with_seed(seed: u64, count: usize) -> Case {
    let base = 100.0;
    let catalog = standard_catalog();
    let buses: Vec<Bus> = (1..=24).map(|i| bus(i, 0.95, 1.05, i == IEEE24_SLACK)).collect();

    let mut branches = Vec::new();
    let mut push = |mut br: Branch| {
        br.id = branches.len() + 1;
        branches.push(br);
    };
    for &(f, t, r, x, c, s) in &RTS_LINES {
        push(line(0, f, t, r, x, c, s, base));
    }
    for &i in &EXTRA_LINES {
        let (f, t, r, x, c, s) = RTS_LINES[i];
        push(line(0, f, t, r, x, c, s, base));
    }
    let transformer = |(f, t, r, x, s): (usize, usize, f64, f64, f64)| {
        let mut br = line(0, f, t, r, x, 0.0, s, base);
        br.tap_min = 0.9;
        br.tap_max = 1.1;
        br
    };
    for &tx in &RTS_TRANSFORMERS {
        push(transformer(tx));
    }
    push(transformer(RTS_TRANSFORMERS[0]));
    let mut shifter = transformer(RTS_TRANSFORMERS[4]);
    shifter.tap_min = 1.0;
    shifter.tap_max = 1.0;
    shifter.phase_min = (-10.0f64).to_radians();
    shifter.phase_max = 10.0f64.to_radians();
    push(shifter);

    let candidates = (1..=24)
        .map(|b| catalog_candidate(&catalog, b, IEEE24_MAX_MVAR))
        .collect();
    let network = Network { buses, branches, candidates, base_mva: base };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenarios = (0..count)
        .map(|s| ieee24_scenario(&mut rng, s, count, base))
        .collect();
    Case { network, scenarios, catalog }
}

fn ieee24_scenario(rng: &mut ChaCha8Rng, index: usize, count: usize, base: f64) -> Scenario {
    let level: f64 = rng.gen_range(0.8..1.25);
    let mut rows = [[0.0f64; 5]; 24];
    for (k, &(p, q)) in RTS_LOAD.iter().enumerate() {
        let noise: f64 = rng.gen_range(0.9..1.1);
        let pf_stress: f64 = rng.gen_range(1.3..2.2);
        rows[k][1] = p * level * noise;
        rows[k][2] = q * level * noise * pf_stress;
    }
    let load: f64 = rows.iter().map(|r| r[1]).sum();
    let mut online = Vec::new();
    for &(b, pmax, qmin, qmax) in &RTS_GEN {
        let up = b == IEEE24_SLACK || rng.gen_bool(0.8);
        online.push((b, pmax, qmin, qmax, up));
    }
    let capacity: f64 = online
        .iter()
        .filter(|g| g.4 && g.0 != IEEE24_SLACK)
        .map(|g| g.1)
        .sum();
    let slack_share = 0.15 * load;
    let dispatch = ((load - slack_share) / capacity).min(1.0);
    let mut others = 0.0;
    for &(b, pmax, qmin, qmax, up) in &online {
        if !up {
            continue;
        }
        let row = &mut rows[b - 1];
        row[3] = 0.5 * qmin;
        row[4] = 0.5 * qmax;
        if b != IEEE24_SLACK {
            row[0] = pmax * dispatch;
            others += row[0];
        }
    }
    rows[IEEE24_SLACK - 1][0] = load - others;
    scenario(&format!("s{}", index + 1), 1.0 / count as f64, base, &rows)
}
