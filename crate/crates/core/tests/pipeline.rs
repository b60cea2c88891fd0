//! End-to-end filtering on the default scenario through the public API.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rfs_slam::density::PmbmDensity;
use rfs_slam::eval::{extract_map, gospa, positions_of, GospaParams};
use rfs_slam::experiment::{initial_filter_state, run_once, RunConfig};
use rfs_slam::geometry::LandmarkType;
use rfs_slam::sim::{generate_measurements, simulate_trajectory};
use rfs_slam::update::{Filter, FilterKind};

fn filter_for(kind: FilterKind) -> (rfs_slam::sim::Scenario, Filter<rfs_slam::geometry::ChannelModel>) {
    let config = RunConfig { filter: kind, ..RunConfig::default() };
    let scenario = config.load_scenario().unwrap();
    let filter_config = config.filter_config(&scenario);
    let (density, sensor) = initial_filter_state(&scenario, &filter_config).unwrap();
    let filter = Filter::new(scenario.channel_model(), filter_config, density, sensor).unwrap();
    (scenario, filter)
}

#[test]
fn virtual_anchors_are_mapped_within_a_few_steps() {
    for kind in [FilterKind::Pmb, FilterKind::Pmbm] {
        let (scenario, mut filter) = filter_for(kind);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let truth = simulate_trajectory(&scenario, &mut rng);
        for ue in truth.iter().skip(1).take(10) {
            let scan = generate_measurements(ue, &scenario, &mut rng).unwrap();
            filter.step(&scan.measurements).unwrap();
            filter.density.validate().unwrap();
        }
        let map = extract_map(&filter.density, 0.5);
        let va = gospa(&positions_of(&map, LandmarkType::Va), &scenario.truth_positions(LandmarkType::Va), &GospaParams::default())
            .unwrap();
        assert_eq!(va.n_missed, 0, "{kind:?}");
        assert!(va.distance < 10.0, "{kind:?}: {}", va.distance);
        let ue = &truth[10];
        let err = ((filter.sensor.mean[0] - ue.position.x).powi(2) + (filter.sensor.mean[1] - ue.position.y).powi(2)).sqrt();
        assert!(err < 3.0, "{kind:?}: position error {err}");
    }
}

#[test]
fn density_checkpoint_round_trips() {
    let (scenario, mut filter) = filter_for(FilterKind::Pmbm);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let truth = simulate_trajectory(&scenario, &mut rng);
    for ue in truth.iter().skip(1).take(6) {
        filter.step(&generate_measurements(ue, &scenario, &mut rng).unwrap().measurements).unwrap();
    }
    let text = filter.density.to_json().unwrap();
    let back = PmbmDensity::from_json(&text).unwrap();
    assert_eq!(back.to_json().unwrap(), text);
    assert_eq!(back.hypotheses.len(), filter.density.hypotheses.len());
    assert!((back.expected_count() - filter.density.expected_count()).abs() < 1e-12);
}

#[test]
fn scattering_points_appear_only_once_in_view() {
    let config = RunConfig::default();
    let scenario = config.load_scenario().unwrap();
    let rec = run_once(&scenario, &config.filter_config(&scenario), 0, 17, false, &()).unwrap();
    // Nothing is in view at the start, so SP GOSPA sits at the all-missed value or above.
    assert!(rec.gospa_sp[4] >= 24.49, "{}", rec.gospa_sp[4]);
    assert!(rec.gospa_sp[39] < rec.gospa_sp[4]);
    assert_eq!(rec.estimates.len(), 40);
    assert!(rec.ms_update.iter().all(|t| *t == 0.0));
}
