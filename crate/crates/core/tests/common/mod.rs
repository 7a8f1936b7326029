//! Random instances shared by the integration tests.
#![allow(dead_code)]

use coopgrid::model::{Prosumer, QuadDevice, TariffHour};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_device(rng: &mut ChaCha8Rng) -> QuadDevice {
    let alpha = rng.random_range(0.1..1.5);
    let beta = rng.random_range(0.1..1.2);
    let d_min = if rng.random_bool(0.7) { 0.0 } else { rng.random_range(0.0..0.6) };
    let d_max = d_min + rng.random_range(0.3..4.0);
    QuadDevice::new(alpha, beta, d_min, d_max).unwrap()
}

/// Prosumer with 1..=max_devices devices, random solar and a random
/// envelope, redrawn until feasible.
pub fn random_prosumer(rng: &mut ChaCha8Rng, id: usize, max_devices: usize) -> Prosumer {
    loop {
        let n = rng.random_range(1..=max_devices);
        let devices: Vec<QuadDevice> = (0..n).map(|_| random_device(rng)).collect();
        let renewable = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..5.0) };
        let z_min = -rng.random_range(0.5..6.0);
        let z_max = rng.random_range(0.5..6.0);
        if let Ok(p) = Prosumer::new(format!("p{id}"), devices, renewable, z_min, z_max) {
            return p;
        }
    }
}

pub fn random_community(rng: &mut ChaCha8Rng, players: usize, max_devices: usize) -> Vec<Prosumer> {
    (0..players).map(|i| random_prosumer(rng, i, max_devices)).collect()
}

pub fn random_tariff(rng: &mut ChaCha8Rng) -> TariffHour {
    let retail = rng.random_range(0.05..0.8);
    let export = retail * rng.random_range(0.0..=1.0);
    TariffHour::new(retail, export).unwrap()
}

/// The two-prosumer example: identical devices, solar only at B.
pub fn worked_pair() -> (Vec<Prosumer>, TariffHour) {
    let dev = QuadDevice::new(1.0, 0.5, 0.0, 10.0).unwrap();
    let c = vec![
        Prosumer::new("A", vec![dev], 0.0, -6.0, 6.0).unwrap(),
        Prosumer::new("B", vec![dev], 3.0, -6.0, 6.0).unwrap(),
    ];
    (c, TariffHour::new(0.4, 0.2).unwrap())
}
