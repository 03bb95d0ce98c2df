//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Everything here is plain Rust behind thin `wasm_bindgen` wrappers, so the
//! logic runs and is tested natively as well.

use meshnet::export::colormap;
use meshnet::mesh_io::TriMesh;
use meshnet::preprocess::{prepare, FaceSet};
use meshnet::shapes;
use meshnet::tensor::{Graph, Tensor};
use wasm_bindgen::prelude::*;

/// Shape names accepted by [`Scene::build`].
pub const SHAPES: &[&str] = &["icosphere", "uv-sphere", "torus", "box", "thin-torus"];

pub fn shape(name: &str) -> Result<TriMesh, String> {
    Ok(match name {
        "icosphere" => shapes::icosphere(3),
        "uv-sphere" => shapes::uv_sphere(32, 16),
        "torus" => shapes::torus(40, 16, 1.0, 0.4),
        "thin-torus" => shapes::torus(48, 10, 1.0, 0.15),
        "box" => shapes::subdivided_box([1.0, 0.6, 0.35], 8),
        other => return Err(format!("unknown shape `{other}` (expected one of {SHAPES:?})")),
    })
}

/// Unit vector at polar angle `theta` from +z and azimuth `phi`.
pub fn direction(theta: f64, phi: f64) -> [f64; 3] {
    [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
}

/// A decimated, normalized shape ready to be drawn and probed.
#[wasm_bindgen]
pub struct Scene {
    input_faces: usize,
    faces: FaceSet,
}

impl Scene {
    pub fn build(name: &str, budget: usize) -> Result<Scene, String> {
        let mesh = shape(name)?;
        let faces = prepare(&mesh, budget).map_err(|e| e.to_string())?;
        Ok(Scene {
            input_faces: mesh.faces().len(),
            faces,
        })
    }

    pub fn face_set(&self) -> &FaceSet {
        &self.faces
    }

    /// Kernel correlation of every face's neighbourhood normals with a
    /// single-vector kernel pointing along `(theta, phi)`.
    pub fn field(&self, theta: f64, phi: f64, sigma: f64) -> Result<Vec<f64>, String> {
        let n = self.faces.len();
        let normals = self.faces.normals();
        let mut sets = Vec::with_capacity(n * 12);
        for (i, nb) in self.faces.neighbors().iter().enumerate() {
            for j in [i, nb[0], nb[1], nb[2]] {
                sets.extend(normals[j].iter().map(|&c| c as f64));
            }
        }
        let mut g = Graph::<f64>::new();
        let sets = g.input(Tensor::new(vec![n, 4, 3], sets).map_err(|e| e.to_string())?);
        let kernel = g.input(Tensor::new(vec![1, 1, 3], direction(theta, phi).to_vec()).map_err(|e| e.to_string())?);
        let kc = g.kernel_correlation(sets, kernel, sigma).map_err(|e| e.to_string())?;
        Ok(g.value(kc).data().to_vec())
    }
}

#[wasm_bindgen]
impl Scene {
    #[wasm_bindgen(constructor)]
    pub fn new(name: &str, budget: usize) -> Result<Scene, JsError> {
        Scene::build(name, budget).map_err(|e| JsError::new(&e))
    }

    /// Face count of the shape before decimation.
    #[wasm_bindgen(js_name = inputFaces)]
    pub fn input_faces(&self) -> usize {
        self.input_faces
    }

    #[wasm_bindgen(js_name = faceCount)]
    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Nine coordinates per face.
    pub fn triangles(&self) -> Vec<f32> {
        (0..self.faces.len())
            .flat_map(|i| self.faces.face_vertices(i))
            .flatten()
            .map(|c| c as f32)
            .collect()
    }

    /// RGB bytes per face for the kernel correlation field.
    #[wasm_bindgen(js_name = kernelField)]
    pub fn kernel_field(&self, theta: f64, phi: f64, sigma: f64) -> Result<Vec<u8>, JsError> {
        let values = self.field(theta, phi, sigma).map_err(|e| JsError::new(&e))?;
        Ok(colormap(&values).into_iter().flatten().collect())
    }

    /// The raw field values, for the range readout.
    #[wasm_bindgen(js_name = kernelValues)]
    pub fn kernel_values(&self, theta: f64, phi: f64, sigma: f64) -> Result<Vec<f64>, JsError> {
        self.field(theta, phi, sigma).map_err(|e| JsError::new(&e))
    }
}

/// Correlation of one normal with one kernel vector as the angle between
/// them sweeps `[0, π]` in `samples` steps.
#[wasm_bindgen(js_name = kernelProfile)]
pub fn kernel_profile(sigma: f64, samples: usize) -> Vec<f64> {
    let steps = samples.max(2);
    (0..steps)
        .map(|i| {
            let a = std::f64::consts::PI * i as f64 / (steps - 1) as f64;
            // |n - m|² for unit vectors at angle a
            (-(2.0 - 2.0 * a.cos()) / (2.0 * sigma * sigma)).exp()
        })
        .collect()
}

#[wasm_bindgen(js_name = shapeNames)]
pub fn shape_names() -> Vec<String> {
    SHAPES.iter().map(|s| s.to_string()).collect()
}
