use pidlens::batch::{fit_and_estimate, TrainConfig};
use pidlens::ingest::{SplitSpec, DEFAULT_TAU};
use pidlens::synth::oracle::DEFAULT_RESOLUTION;
use pidlens::synth::{brute_force_pid, discretized_joint, gen_continuous, ContinuousSpec, Structure};
use pidlens::PidAtoms;

const NAMES: [&str; 4] = ["R", "U1", "U2", "S"];

/// Oracle atoms of the binarized features and BATCH atoms with default settings.
fn compare(structure: Structure) -> (PidAtoms, PidAtoms) {
    let spec = ContinuousSpec {
        cluster_separation: 3.0,
        ..ContinuousSpec::new(structure, 4000, 11)
    };
    let recs = gen_continuous(&spec).unwrap();
    let joint = discretized_joint(&recs, DEFAULT_TAU).unwrap();
    let oracle = brute_force_pid(&joint, DEFAULT_RESOLUTION).unwrap().atoms;
    let (model, est) = fit_and_estimate(&recs, &SplitSpec::default(), &TrainConfig::default()).unwrap();
    assert!(model.loss_trace.iter().all(|v| v.is_finite()));
    (oracle, est.decomposition.atoms)
}

fn assert_agrees(structure: Structure) -> PidAtoms {
    let (oracle, batch) = compare(structure);
    assert_eq!(
        batch.dominant(),
        oracle.dominant(),
        "{structure}: dominant {} vs {}",
        NAMES[batch.dominant()],
        NAMES[oracle.dominant()]
    );
    for (i, (b, o)) in batch.as_array().iter().zip(oracle.as_array()).enumerate() {
        assert!((b - o).abs() <= 0.15, "{structure} {}: batch {b} oracle {o}", NAMES[i]);
    }
    batch
}

#[test]
fn synergy_is_found() {
    let a = assert_agrees(Structure::Synergy);
    assert_eq!(a.dominant(), 3);
}

#[test]
fn redundancy_is_found() {
    let a = assert_agrees(Structure::Redundancy);
    assert_eq!(a.dominant(), 0);
}

#[test]
fn unique_information_is_found() {
    let a = assert_agrees(Structure::Unique1);
    assert_eq!(a.dominant(), 1);
    assert!(a.synergy <= 0.1);
    let b = assert_agrees(Structure::Unique2);
    assert_eq!(b.dominant(), 2);
}

#[test]
fn independent_noise_stays_near_zero() {
    let (_, a) = compare(Structure::Independent);
    assert!(a.as_array().iter().all(|v| *v <= 0.05), "{a:?}");
}
