//! Browser bindings: buffer budgets, telescoping schedules and single-layer
//! simulations, each returning JSON text.

use serde_json::{json, Value};
use sparsim::arch::buffer_accounting;
use sparsim::balance::{telescoping_schedule, TelescopeSpec};
use sparsim::{simulate, ArchConfig, LayerSpec, Scale, Variant, Workload};
use wasm_bindgen::prelude::*;

fn scale(name: &str) -> Result<Scale, String> {
    match name {
        "desk" => Ok(Scale::Desk),
        "full" => Ok(Scale::Full),
        _ => Err(format!("unknown scale {name:?}")),
    }
}

fn variant(name: &str) -> Result<Variant, String> {
    Variant::parse(name).ok_or_else(|| format!("unknown variant {name:?}"))
}

pub fn buffer_budget_json(variant_name: &str, scale_name: &str) -> Result<Value, String> {
    let cfg = ArchConfig::preset(variant(variant_name)?, scale(scale_name)?);
    let b = buffer_accounting(&cfg);
    Ok(json!({
        "variant": variant_name,
        "total_macs": cfg.total_macs(),
        "budget": b,
        "total_mb": b.total_bytes as f64 / sparsim::arch::MB,
    }))
}

/// `schedule` is a comma-separated list of group sizes, or empty for the
/// default schedule.
pub fn telescope_json(requesters: usize, schedule: &str) -> Result<Value, String> {
    let spec = if schedule.trim().is_empty() {
        TelescopeSpec::Default
    } else {
        let sizes = schedule
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|_| format!("bad group size {s:?}")))
            .collect::<Result<Vec<_>, _>>()?;
        TelescopeSpec::Explicit(sizes)
    };
    let s = telescoping_schedule(requesters, &spec).map_err(|e| e.to_string())?;
    Ok(json!({ "requesters": requesters, "group_sizes": s.group_sizes, "fetches": s.group_sizes.len() }))
}

/// Runs the dense baseline and each listed variant on one layer.
pub fn simulate_layer_json(layer_json: &str, variants: &str) -> Result<Value, String> {
    let layer: LayerSpec = serde_json::from_str(layer_json).map_err(|e| format!("layer: {e}"))?;
    let w = Workload::generate(&layer, Default::default()).map_err(|e| e.to_string())?;
    let dense = simulate(&w, &ArchConfig::preset(Variant::Dense, Scale::Desk)).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for name in variants.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let r = simulate(&w, &ArchConfig::preset(variant(name)?, Scale::Desk)).map_err(|e| e.to_string())?.report;
        let [nonzero, zero, barrier, bandwidth, other] = r.breakdown.fractions();
        rows.push(json!({
            "variant": name,
            "total_cycles": r.total_cycles,
            "speedup_vs_dense": dense.report.total_cycles as f64 / r.total_cycles.max(1) as f64,
            "refetches_per_chunk": r.stats.refetches_per_chunk(),
            "breakdown": {
                "nonzero_compute": nonzero,
                "zero_compute": zero,
                "barrier_loss": barrier,
                "bandwidth_delay": bandwidth,
                "other": other,
            },
        }));
    }
    Ok(json!({ "layer": layer, "dense_cycles": dense.report.total_cycles, "variants": rows }))
}

fn to_js(r: Result<Value, String>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn buffer_budget(variant: &str, scale: &str) -> Result<String, JsError> {
    to_js(buffer_budget_json(variant, scale))
}

#[wasm_bindgen]
pub fn telescope(requesters: usize, schedule: &str) -> Result<String, JsError> {
    to_js(telescope_json(requesters, schedule))
}

#[wasm_bindgen]
pub fn simulate_layer(layer_json: &str, variants: &str) -> Result<String, JsError> {
    to_js(simulate_layer_json(layer_json, variants))
}
