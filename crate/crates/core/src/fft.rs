//! Shared FFT plan cache so hot loops do not replan per call.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use once_cell::sync::Lazy;
use rustfft::{Fft, FftPlanner};

type PlanKey = (usize, bool);

static PLANS: Lazy<Mutex<HashMap<PlanKey, Arc<dyn Fft<f64>>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

pub fn forward(len: usize) -> Arc<dyn Fft<f64>> {
    plan(len, true)
}

pub fn inverse(len: usize) -> Arc<dyn Fft<f64>> {
    plan(len, false)
}

fn plan(len: usize, fwd: bool) -> Arc<dyn Fft<f64>> {
    let mut cache = PLANS.lock().expect("fft plan cache poisoned");
    cache
        .entry((len, fwd))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if fwd {
                planner.plan_fft_forward(len)
            } else {
                planner.plan_fft_inverse(len)
            }
        })
        .clone()
}
