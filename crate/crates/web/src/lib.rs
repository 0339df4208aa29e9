//! WebAssembly bindings for the browser demo in `www/`.

use wasm_bindgen::prelude::*;

pub mod demo;

#[wasm_bindgen]
pub struct NeuronTrace(demo::NeuronTrace);

#[wasm_bindgen]
impl NeuronTrace {
    #[wasm_bindgen(getter)]
    pub fn voltage(&self) -> Vec<f64> {
        self.0.voltage.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn threshold(&self) -> Vec<f64> {
        self.0.threshold.clone()
    }

    #[wasm_bindgen(getter, js_name = pseudoDerivative)]
    pub fn pseudo_derivative(&self) -> Vec<f64> {
        self.0.pseudo_derivative.clone()
    }

    #[wasm_bindgen(getter, js_name = spikeTimes)]
    pub fn spike_times(&self) -> Vec<u32> {
        self.0.spike_times.iter().map(|&t| t as u32).collect()
    }
}

#[wasm_bindgen]
pub struct Reach(demo::Reach);

#[wasm_bindgen]
impl Reach {
    #[wasm_bindgen(getter)]
    pub fn errors(&self) -> Vec<f64> {
        self.0.errors.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn gears(&self) -> Vec<f64> {
        self.0.gears.clone()
    }
}

#[wasm_bindgen(js_name = neuronTrace)]
pub fn neuron_trace(input: f64, zeta: f64, v_thr: f64, steps: usize) -> Result<NeuronTrace, JsError> {
    demo::neuron_trace(input, zeta, v_thr, steps)
        .map(NeuronTrace)
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = armPoints)]
pub fn arm_points(variant: &str, gears: Vec<f64>) -> Result<Vec<f64>, JsError> {
    demo::arm_points(variant, &gears).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = neutralGears)]
pub fn neutral_gears(variant: &str, n_joints: usize) -> Result<Vec<f64>, JsError> {
    demo::neutral_gears(variant, n_joints).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn reach(
    variant: &str,
    n_joints: usize,
    x: f64,
    y: f64,
    z: f64,
    optimizer: &str,
    eta0: f64,
    iterations: usize,
) -> Result<Reach, JsError> {
    demo::reach(variant, n_joints, [x, y, z], optimizer, eta0, iterations)
        .map(Reach)
        .map_err(|e| JsError::new(&e))
}
