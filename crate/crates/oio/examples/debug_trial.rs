use oio::config::{PolicyKind, SimConfig};
use oio::harness::{run_trial, trial_rng, SimWorld};
use oio::sensors::SensorKind;

fn main() {
    let mut cfg = SimConfig::default();
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(42);
    if let Some(alg) = args.get(2) {
        cfg.trial.algorithm = match alg.as_str() {
            "belief" => PolicyKind::Belief,
            "rl" => PolicyKind::Rl,
            _ => PolicyKind::Gradient,
        };
    }
    if let Some(s) = args.get(3) {
        cfg.trial.sensor = if s == "ec" { SensorKind::Ec } else { SensorKind::Mox };
    }

    let mut rng = trial_rng(seed, 0);
    let world = SimWorld::new(&cfg, &mut rng).unwrap();
    println!("source: {:?}", world.source);
    println!("start sensor: {:?}", world.sensor_position());
    println!("start dist: {:.3}", world.distance_to_source());
    println!("plume mass at start: {:.3}", world.plume.mass());

    let mut rng = trial_rng(seed, 0);
    let r = run_trial(&cfg, None, &mut rng).unwrap();
    println!("success={} t={:.1}", r.success, r.time_to_locate);
    for row in &r.trajectory {
        let d = ((row.x - world.source.x).powi(2) + (row.y - world.source.y).powi(2) + (row.z - world.source.z).powi(2)).sqrt();
        println!(
            "t={:5.1} pos=({:+.3},{:+.3},{:+.3}) effdist={:.3} read={:.4} smooth={:.4} rssi={:8.2} act={:<8} plume={}",
            row.t, row.x, row.y, row.z, d, row.reading, row.smoothed, row.rssi, row.action.name(), row.in_plume as u8
        );
    }
}
