//! Test-only reference implementations, written independently of the crate's
//! closed-form code paths.

#![allow(dead_code)]

pub mod props;

use nalgebra::{Matrix4, Vector3, Vector4};
use trunk_snn::kinematics::{ArmSpec, GearState, Variant};
use trunk_snn::neuron::{NeuronConfig, ResetMode};
use trunk_snn::{network::NetworkWeights, Matrix};

/// Scalar reverse-mode autodiff tape. Every node stores its value and the
/// local partial derivatives w.r.t. its parents.
#[derive(Default)]
pub struct Tape {
    vals: Vec<f64>,
    parents: Vec<Vec<(usize, f64)>>,
}

#[derive(Clone, Copy, Debug)]
pub struct Node(pub usize);

impl Tape {
    fn push(&mut self, v: f64, parents: Vec<(usize, f64)>) -> Node {
        self.vals.push(v);
        self.parents.push(parents);
        Node(self.vals.len() - 1)
    }

    pub fn leaf(&mut self, v: f64) -> Node {
        self.push(v, Vec::new())
    }

    pub fn value(&self, n: Node) -> f64 {
        self.vals[n.0]
    }

    pub fn add(&mut self, a: Node, b: Node) -> Node {
        self.push(self.vals[a.0] + self.vals[b.0], vec![(a.0, 1.0), (b.0, 1.0)])
    }

    pub fn sub(&mut self, a: Node, b: Node) -> Node {
        self.push(self.vals[a.0] - self.vals[b.0], vec![(a.0, 1.0), (b.0, -1.0)])
    }

    pub fn mul(&mut self, a: Node, b: Node) -> Node {
        let (x, y) = (self.vals[a.0], self.vals[b.0]);
        self.push(x * y, vec![(a.0, y), (b.0, x)])
    }

    pub fn scale(&mut self, a: Node, c: f64) -> Node {
        self.push(self.vals[a.0] * c, vec![(a.0, c)])
    }

    pub fn offset(&mut self, a: Node, c: f64) -> Node {
        self.push(self.vals[a.0] + c, vec![(a.0, 1.0)])
    }

    pub fn sum(&mut self, nodes: &[Node]) -> Node {
        let v = nodes.iter().map(|n| self.vals[n.0]).sum();
        self.push(v, nodes.iter().map(|n| (n.0, 1.0)).collect())
    }

    /// Heaviside step of `v - thr` whose derivative is replaced by the
    /// triangular surrogate `lambda * max(0, 1 - |v - thr| / width)`.
    pub fn spike(&mut self, v: Node, thr: Node, lambda: f64, width: f64) -> Node {
        let d = self.vals[v.0] - self.vals[thr.0];
        let z = if d >= 0.0 { 1.0 } else { 0.0 };
        let h = lambda * (1.0 - d.abs() / width).max(0.0);
        self.push(z, vec![(v.0, h), (thr.0, -h)])
    }

    /// Adjoint of every node w.r.t. `out`.
    pub fn gradient(&self, out: Node) -> Vec<f64> {
        let mut adj = vec![0.0; self.vals.len()];
        adj[out.0] = 1.0;
        for i in (0..=out.0).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            for &(p, d) in &self.parents[i] {
                adj[p] += a * d;
            }
        }
        adj
    }
}

/// Leaves and state nodes of one unrolled network.
pub struct Unrolled {
    pub tape: Tape,
    pub w_in: Vec<Vec<Node>>,
    pub w_rec: Vec<Vec<Node>>,
    pub w_out: Vec<Vec<Node>>,
    pub x: Vec<Vec<Node>>,
    pub v: Vec<Vec<Node>>,
    pub z: Vec<Vec<Node>>,
    pub y: Vec<Vec<Node>>,
}

/// Builds the unrolled network on a fresh tape: neurons `n_hidden - n_alif ..`
/// are adaptive.
pub fn unroll(inputs: &Matrix, w: &NetworkWeights, n_alif: usize, cfg: &NeuronConfig) -> Unrolled {
    let mut tape = Tape::default();
    let n_in = w.w_in.rows();
    let n_h = w.w_rec.rows();
    let n_out = w.w_out.cols();
    let n_lif = n_h - n_alif;
    let grid = |tape: &mut Tape, m: &Matrix| -> Vec<Vec<Node>> {
        (0..m.rows())
            .map(|r| (0..m.cols()).map(|c| tape.leaf(m[(r, c)])).collect())
            .collect()
    };
    let w_in = grid(&mut tape, &w.w_in);
    let w_rec = grid(&mut tape, &w.w_rec);
    let w_out = grid(&mut tape, &w.w_out);
    let x = grid(&mut tape, inputs);
    let zero = tape.leaf(0.0);

    let mut v_prev = vec![zero; n_h];
    let mut a_prev = vec![zero; n_h];
    let mut z_prev = vec![zero; n_h];
    let mut y_prev = vec![zero; n_out];
    let (mut vs, mut zs, mut ys) = (Vec::new(), Vec::new(), Vec::new());

    for t in 0..inputs.rows() {
        let mut v_t = Vec::new();
        let mut z_t = Vec::new();
        let mut a_t = vec![zero; n_h];
        for j in 0..n_h {
            let mut terms = Vec::new();
            terms.push(tape.scale(v_prev[j], cfg.alpha));
            for i in 0..n_in {
                terms.push(tape.mul(x[t][i], w_in[i][j]));
            }
            for jp in 0..n_h {
                terms.push(tape.mul(z_prev[jp], w_rec[jp][j]));
            }
            let adaptive = j >= n_lif;
            let reset_amount = if adaptive && cfg.reset == ResetMode::Adaptive {
                let za = tape.scale(a_prev[j], cfg.zeta);
                tape.offset(za, cfg.v_thr)
            } else {
                tape.leaf(cfg.v_thr)
            };
            let reset = tape.mul(z_prev[j], reset_amount);
            let pre = tape.sum(&terms);
            let v = tape.sub(pre, reset);
            let thr = if adaptive {
                let decayed = tape.scale(a_prev[j], cfg.rho);
                let a = tape.add(decayed, z_prev[j]);
                a_t[j] = a;
                let za = tape.scale(a, cfg.zeta);
                tape.offset(za, cfg.v_thr)
            } else {
                tape.leaf(cfg.v_thr)
            };
            let z = tape.spike(v, thr, cfg.lambda_pd, cfg.v_thr);
            v_t.push(v);
            z_t.push(z);
        }
        let mut y_t = Vec::new();
        for k in 0..n_out {
            let mut terms = vec![tape.scale(y_prev[k], cfg.alpha)];
            for j in 0..n_h {
                terms.push(tape.mul(z_t[j], w_out[j][k]));
            }
            y_t.push(tape.sum(&terms));
        }
        v_prev = v_t.clone();
        z_prev = z_t.clone();
        a_prev = a_t;
        y_prev = y_t.clone();
        vs.push(v_t);
        zs.push(z_t);
        ys.push(y_t);
    }
    Unrolled {
        tape,
        w_in,
        w_rec,
        w_out,
        x,
        v: vs,
        z: zs,
        y: ys,
    }
}

/// Gradients of `E = sum L[t,k] y[t,k] + sum S[t,j] z[t,j]` via the tape.
pub struct OracleGrads {
    pub g_in: Matrix,
    pub g_rec: Matrix,
    pub g_out: Matrix,
    pub g_x: Matrix,
}

pub fn oracle_gradients(u: &mut Unrolled, readout_coef: &Matrix, spike_coef: Option<&Matrix>) -> OracleGrads {
    let mut terms = Vec::new();
    for (t, row) in u.y.iter().enumerate() {
        for (k, &y) in row.iter().enumerate() {
            terms.push(u.tape.scale(y, readout_coef[(t, k)]));
        }
    }
    if let Some(s) = spike_coef {
        for (t, row) in u.z.iter().enumerate() {
            for (j, &z) in row.iter().enumerate() {
                terms.push(u.tape.scale(z, s[(t, j)]));
            }
        }
    }
    let loss = u.tape.sum(&terms);
    let adj = u.tape.gradient(loss);
    let collect = |nodes: &Vec<Vec<Node>>| -> Matrix {
        Matrix::from_fn(nodes.len(), nodes[0].len(), |r, c| adj[nodes[r][c].0])
    };
    OracleGrads {
        g_in: collect(&u.w_in),
        g_rec: collect(&u.w_rec),
        g_out: collect(&u.w_out),
        g_x: collect(&u.x),
    }
}

/// Homogeneous transform of a rotation about `axis` (unit) by `angle` radians.
fn rot4(axis: Vector3<f64>, angle: f64) -> Matrix4<f64> {
    // Rodrigues, written out
    let (s, c) = angle.sin_cos();
    let (x, y, z) = (axis.x, axis.y, axis.z);
    let t = 1.0 - c;
    Matrix4::new(
        t * x * x + c,
        t * x * y - s * z,
        t * x * z + s * y,
        0.0,
        t * x * y + s * z,
        t * y * y + c,
        t * y * z - s * x,
        0.0,
        t * x * z - s * y,
        t * y * z + s * x,
        t * z * z + c,
        0.0,
        0.0,
        0.0,
        0.0,
        1.0,
    )
}

fn trans4(d: Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m[(0, 3)] = d.x;
    m[(1, 3)] = d.y;
    m[(2, 3)] = d.z;
    m
}

/// Joint transform (translate along local z, then rotate) built from
/// homogeneous matrices.
pub fn joint_matrix(g: [f64; 3], spec: &ArmSpec) -> Matrix4<f64> {
    match spec.variant {
        Variant::FourGeared => {
            let tx = (g[0] * spec.tilt_max).to_radians();
            let ty = (g[1] * spec.tilt_max).to_radians();
            let coupling = 1.0 - g[0].abs().max(g[1].abs());
            let d = spec.base_height + spec.stretch_max / 2.0 * (1.0 + g[2] * coupling);
            trans4(Vector3::new(0.0, 0.0, d)) * rot4(Vector3::x(), tx) * rot4(Vector3::y(), ty)
        }
        Variant::ThreeGeared => {
            let r = spec.gear_radius;
            let pts: Vec<Vector3<f64>> = [90.0f64, 210.0, 330.0]
                .iter()
                .zip(g)
                .map(|(deg, gi)| {
                    let a = deg.to_radians();
                    Vector3::new(r * a.cos(), r * a.sin(), gi * spec.stretch_max)
                })
                .collect();
            let n = (pts[1] - pts[0]).cross(&(pts[2] - pts[0])).normalize();
            let n = if n.z < 0.0 { -n } else { n };
            let centroid = (pts[0] + pts[1] + pts[2]) / 3.0;
            let axis = Vector3::z().cross(&n);
            let rot = if axis.norm() < 1e-15 {
                Matrix4::identity()
            } else {
                rot4(axis.normalize(), n.z.clamp(-1.0, 1.0).acos())
            };
            trans4(Vector3::new(0.0, 0.0, spec.base_height + centroid.z)) * rot
        }
    }
}

/// End-effector position and rotation matrix of the chained homogeneous transforms.
pub fn chain_matrices(gears: &GearState, spec: &ArmSpec) -> Vec<Matrix4<f64>> {
    let mut m = Matrix4::identity();
    let mut out = vec![m];
    for k in 0..gears.n_joints() {
        m *= joint_matrix(gears.joint(k), spec);
        out.push(m);
    }
    out
}

pub fn origin(m: &Matrix4<f64>) -> Vector3<f64> {
    (m * Vector4::new(0.0, 0.0, 0.0, 1.0)).xyz()
}

/// Unit normal (z >= 0) of the least-squares plane through `points`, from the
/// smallest singular vector of the centered coordinates.
pub fn fitted_plane_normal(points: &[Vector3<f64>]) -> Vector3<f64> {
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + p) / points.len() as f64;
    let m = nalgebra::DMatrix::from_fn(points.len(), 3, |r, k| points[r][k] - c[k]);
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("three singular values");
    let n = Vector3::new(v_t[(idx, 0)], v_t[(idx, 1)], v_t[(idx, 2)]).normalize();
    if n.z < 0.0 {
        -n
    } else {
        n
    }
}
