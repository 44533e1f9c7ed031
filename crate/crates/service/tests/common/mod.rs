#![allow(dead_code)]

use flame_core::ModelVector;
use flame_service::{ClientTrust, DeviceKey, ServiceConfig};

pub fn trust() -> ClientTrust {
    ClientTrust {
        device_key: DeviceKey([0x5a; 32]),
        measurement: flame_service::attest::measure(b"test build"),
    }
}

pub fn config(initial: ModelVector, quorum: usize) -> ServiceConfig {
    let t = trust();
    ServiceConfig::new(t.device_key, t.measurement, initial, quorum)
}

pub fn model(v: &[f32]) -> ModelVector {
    ModelVector::new(v.to_vec()).unwrap()
}
