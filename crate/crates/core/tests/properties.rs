mod common;

use coopgrid::alloc::{self, AllocationContext};
use coopgrid::game::{self, build_game, build_table, Scheme, GAME_TOL};
use coopgrid::model::{payment, Coalition, Prosumer};
use coopgrid::solver;
use proptest::prelude::*;

use common::{random_community, random_device, random_tariff, rng};

fn config() -> ProptestConfig {
    ProptestConfig { cases: 48, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn payment_is_subadditive(a in -20.0f64..20.0, b in -20.0f64..20.0, retail in 0.0f64..1.0, share in 0.0f64..=1.0) {
        let export = retail * share;
        let lhs = payment(a + b, retail, export).unwrap();
        let rhs = payment(a, retail, export).unwrap() + payment(b, retail, export).unwrap();
        prop_assert!(lhs <= rhs + 1e-12);
    }

    #[test]
    fn more_renewable_never_hurts(seed in any::<u64>(), steps in prop::collection::vec(0.0f64..1.5, 1..6)) {
        let mut r = rng(seed);
        let mut p = random_community(&mut r, 1, 3).remove(0);
        let t = random_tariff(&mut r);
        let mut last = solver::best_response(&p, 0, t).unwrap().schedule.welfare;
        for s in steps {
            p.renewable += s;
            if p.validate().is_err() {
                break;
            }
            let w = solver::best_response(&p, 0, t).unwrap().schedule.welfare;
            prop_assert!(w >= last - 1e-9, "{w} < {last}");
            last = w;
        }
    }

    #[test]
    fn centralized_dominates_decentralized(seed in any::<u64>(), players in 1usize..7) {
        let mut r = rng(seed);
        let c = random_community(&mut r, players, 3);
        let t = random_tariff(&mut r);
        let grand = Coalition::grand(players);
        let central = solver::centralized_schedule(&c, grand, t).unwrap().schedule.welfare;
        let decentral = solver::decentralized_schedule(&c, grand, t).unwrap().welfare;
        prop_assert!(central >= decentral - 1e-9, "{central} < {decentral}");
    }

    #[test]
    fn schedules_respect_envelopes(seed in any::<u64>(), players in 1usize..6) {
        let mut r = rng(seed);
        let c = random_community(&mut r, players, 3);
        let t = random_tariff(&mut r);
        let sol = solver::centralized_schedule(&c, Coalition::grand(players), t).unwrap();
        for (k, &i) in sol.schedule.members.iter().enumerate() {
            let p = &c[i];
            let z = sol.schedule.z[k];
            prop_assert!(z >= p.z_min - 1e-9 && z <= p.z_max + 1e-9);
            let used: f64 = sol.schedule.d[k].iter().sum();
            prop_assert!((used - p.renewable - z).abs() < 1e-9);
            for (d, dev) in sol.schedule.d[k].iter().zip(&p.devices) {
                prop_assert!(*d >= dev.d_min - 1e-9 && *d <= dev.d_max + 1e-9);
            }
        }
    }

    #[test]
    fn net_consumption_rule_in_decentralized_core(seed in any::<u64>(), players in 2usize..6) {
        let mut r = rng(seed);
        let c = random_community(&mut r, players, 2);
        let t = random_tariff(&mut r);
        let g = build_game(&c, Scheme::Decentralized, t, 0).unwrap();
        let a = alloc::net_consumption_rule(&AllocationContext::new(&c, &g));
        let check = game::in_core(&a.payoffs, &g.table);
        prop_assert!(check.in_core, "blocked by {:?}", check.blocking);
    }

    #[test]
    fn shapley_treats_twins_equally(seed in any::<u64>(), others in 1usize..4) {
        let mut r = rng(seed);
        let mut c = random_community(&mut r, others, 2);
        let twin = Prosumer { id: "twin".into(), ..c[0].clone() };
        c.push(twin);
        let t = random_tariff(&mut r);
        for scheme in Scheme::ALL {
            let g = build_game(&c, scheme, t, 0).unwrap();
            let a = alloc::shapley(&AllocationContext::new(&c, &g)).unwrap();
            prop_assert!((a.payoffs[0] - a.payoffs[others]).abs() < 1e-8);
        }
    }

    #[test]
    fn grand_coalition_is_largest_when_singletons_are_nonnegative(seed in any::<u64>(), players in 2usize..6) {
        let mut r = rng(seed);
        let c = random_community(&mut r, players, 2);
        let t = random_tariff(&mut r);
        for scheme in Scheme::ALL {
            let table = build_table(&c, scheme, t, 0).unwrap();
            let grand = table.value(table.grand());
            if table.singleton_values().iter().all(|&v| v >= 0.0) {
                for s in Coalition::grand(players).subsets() {
                    prop_assert!(grand >= table.value(s) - GAME_TOL);
                }
            } else {
                prop_assert!(game::check_superadditive(&table).is_empty());
            }
        }
    }
}

#[test]
fn dummy_player_gets_standalone_value_under_shapley() {
    // a member with no devices and no renewable adds nothing and is owed nothing
    let mut r = rng(77);
    let mut c = random_community(&mut r, 3, 2);
    let dev = random_device(&mut r);
    let idle = coopgrid::model::QuadDevice::new(dev.alpha, dev.beta, 0.0, dev.d_max).unwrap();
    c.push(Prosumer::new("idle", vec![idle], 0.0, 0.0, 0.0).unwrap());
    let t = random_tariff(&mut r);
    let g = build_game(&c, Scheme::Centralized, t, 0).unwrap();
    let a = alloc::shapley(&AllocationContext::new(&c, &g)).unwrap();
    assert!(a.payoffs[3].abs() < 1e-8, "dummy got {}", a.payoffs[3]);
}
