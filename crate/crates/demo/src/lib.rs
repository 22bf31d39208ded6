//! Browser demo: JSON-returning wrappers around the core library, exported
//! through wasm-bindgen on wasm32.

pub mod api;

#[cfg(target_arch = "wasm32")]
mod bindings {
    use wasm_bindgen::prelude::*;

    use crate::api;

    fn js(r: Result<String, String>) -> Result<String, JsError> {
        r.map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen]
    pub fn schedule_json(steps: usize, c0: f64, c1: f64) -> Result<String, JsError> {
        js(api::schedule_json(steps, c0, c1))
    }

    #[wasm_bindgen]
    pub fn reverse_density_json(
        target: &str,
        sampler: &str,
        steps: usize,
        c0: f64,
        c1: f64,
        points: usize,
    ) -> Result<String, JsError> {
        js(api::reverse_density_json(
            target, sampler, steps, c0, c1, points,
        ))
    }

    #[wasm_bindgen]
    pub fn moments_json(
        target: &str,
        t: usize,
        steps: usize,
        c0: f64,
        c1: f64,
    ) -> Result<String, JsError> {
        js(api::moments_json(target, t, steps, c0, c1))
    }
}
