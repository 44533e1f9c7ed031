//! Whole experiments on the bundled scenarios.

use std::path::PathBuf;

use flame_core::Defense;
use flame_harness::{run_experiment, write_csv, Scenario, Transport};

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    Scenario::load(&path).unwrap()
}

#[test]
fn boosted_attack_is_stopped_by_the_defense() {
    let attack = scenario("boost-attack.tomlish");
    let defended = run_experiment(&attack).unwrap();
    let undefended = run_experiment(&scenario("boost-attack-fedavg.tomlish")).unwrap();
    let mut baseline = attack.clone();
    baseline.malicious = 0;
    baseline.defense = Defense::FedAvg;
    let baseline = run_experiment(&baseline).unwrap();

    assert_eq!(defended.len(), attack.rounds);
    let (d, u, b) = (defended.last().unwrap(), undefended.last().unwrap(), baseline.last().unwrap());
    assert!(u.ba >= 0.8, "undefended BA {}", u.ba);
    assert!(d.ba <= 0.1, "defended BA {}", d.ba);
    assert!((d.ma - b.ma).abs() <= 0.05, "defended MA {} vs baseline {}", d.ma, b.ma);
    for row in &defended {
        assert!((0.0..=1.0).contains(&row.ma) && (0.0..=1.0).contains(&row.ba));
        assert_eq!(row.accepted + row.rejected_benign + row.rejected_malicious, attack.clients);
        let accepted_benign = row.accepted - row.accepted_malicious;
        assert!(row.accepted_malicious <= accepted_benign, "round {}: {row:?}", row.round);
    }
}

#[test]
fn defense_costs_little_accuracy_without_attackers() {
    let flame = scenario("no-attack.tomlish");
    assert_eq!((flame.malicious, flame.lambda), (0, 0.0005));
    let mut fedavg = flame.clone();
    fedavg.defense = Defense::FedAvg;
    let a = run_experiment(&flame).unwrap().last().unwrap().ma;
    let b = run_experiment(&fedavg).unwrap().last().unwrap().ma;
    assert!((a - b).abs() <= 0.03, "flame MA {a} vs fedavg MA {b}");
}

#[test]
fn fixed_seed_reproduces_metrics() {
    let mut s = scenario("boost-attack.tomlish");
    s.rounds = 8;
    let a = run_experiment(&s).unwrap();
    assert_eq!(a, run_experiment(&s).unwrap());
    s.seed += 1;
    assert_ne!(a, run_experiment(&s).unwrap());
}

#[test]
fn scheduler_transport_matches_in_process() {
    let mut s = scenario("boost-attack.tomlish");
    s.rounds = 5;
    s.clients = 9;
    s.malicious = 3;
    let direct = run_experiment(&s).unwrap();
    s.transport = Transport::Service;
    assert_eq!(direct, run_experiment(&s).unwrap());
    s.defense = Defense::FedAvg;
    let networked = run_experiment(&s).unwrap();
    s.transport = Transport::InProcess;
    assert_eq!(networked, run_experiment(&s).unwrap());
}

#[test]
fn hidden_layer_model_runs() {
    let mut s = scenario("boost-attack.tomlish");
    s.rounds = 10;
    s.model = flame_harness::ModelKind::Mlp { hidden: 8 };
    let rows = run_experiment(&s).unwrap();
    assert!(rows.last().unwrap().ma > 0.9);
    let mut csv = Vec::new();
    write_csv(&mut csv, &rows).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 11);
}
