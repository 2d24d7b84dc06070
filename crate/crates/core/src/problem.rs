//! Synthetic quadratic federated bilevel problems and the stochastic
//! first- and second-order oracles clients call during local updates.
//!
//! Client `i` holds
//!
//! ```text
//! g_i(x, y) = 1/2 yᵀ A_i y + xᵀ B_i y + c_iᵀ y
//! f_i(x, y) = 1/2 (y - y_ref_i)ᵀ D_i (y - y_ref_i) + 1/2 (x - x_ref_i)ᵀ E_i (x - x_ref_i)
//! ```
//!
//! with `A_i` symmetric positive definite, so every derivative the
//! algorithms need has a closed form.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{rng_stream, Purpose, Stream};

/// Tolerance on `Σ p_i = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Quadratic data of one client.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientData {
    /// `∇²_yy g_i`, `d_y × d_y`, SPD.
    pub a: DMatrix<f64>,
    /// `∇²_xy g_i`, `d_x × d_y`.
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
    /// `d_y × d_y`, symmetric PSD.
    pub d: DMatrix<f64>,
    pub y_ref: DVector<f64>,
    /// `d_x × d_x`, symmetric PSD.
    pub e: DMatrix<f64>,
    pub x_ref: DVector<f64>,
}

impl ClientData {
    /// All-zero client except `A = I`.
    pub fn trivial(d_x: usize, d_y: usize) -> Self {
        ClientData {
            a: DMatrix::identity(d_y, d_y),
            b: DMatrix::zeros(d_x, d_y),
            c: DVector::zeros(d_y),
            d: DMatrix::zeros(d_y, d_y),
            y_ref: DVector::zeros(d_y),
            e: DMatrix::zeros(d_x, d_x),
            x_ref: DVector::zeros(d_x),
        }
    }
}

/// A federated bilevel problem with `n` quadratic clients.
#[derive(Clone, Debug, PartialEq)]
pub struct BilevelInstance {
    d_x: usize,
    d_y: usize,
    weights: Vec<f64>,
    clients: Vec<ClientData>,
}

fn min_max_eigen(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(m.clone());
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= 1e-12 * scale
}

impl BilevelInstance {
    /// Validates dimensions, symmetry, definiteness and weights.
    pub fn new(weights: Vec<f64>, clients: Vec<ClientData>) -> Result<Self> {
        let n = clients.len();
        if n == 0 {
            return Err(Error::invalid("n", "need at least one client"));
        }
        if weights.len() != n {
            return Err(Error::Dimension {
                what: "weights",
                expected: n,
                got: weights.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::invalid("weights", format!("every p_i must be > 0, got {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid("weights", format!("must sum to 1, got {total}")));
        }
        let d_x = clients[0].x_ref.len();
        let d_y = clients[0].c.len();
        if d_x == 0 || d_y == 0 {
            return Err(Error::invalid("dimensions", "d_x and d_y must be >= 1"));
        }
        for (i, cl) in clients.iter().enumerate() {
            let shapes = [
                ("A", cl.a.shape(), (d_y, d_y)),
                ("B", cl.b.shape(), (d_x, d_y)),
                ("c", cl.c.shape(), (d_y, 1)),
                ("D", cl.d.shape(), (d_y, d_y)),
                ("y_ref", cl.y_ref.shape(), (d_y, 1)),
                ("E", cl.e.shape(), (d_x, d_x)),
                ("x_ref", cl.x_ref.shape(), (d_x, 1)),
            ];
            for (name, got, want) in shapes {
                if got != want {
                    return Err(Error::invalid(
                        format!("client {i} {name}"),
                        format!("expected shape {want:?}, got {got:?}"),
                    ));
                }
            }
            let all_finite = [&cl.a, &cl.b, &cl.d, &cl.e]
                .iter()
                .all(|m| m.iter().all(|v| v.is_finite()))
                && [&cl.c, &cl.y_ref, &cl.x_ref]
                    .iter()
                    .all(|v| v.iter().all(|x| x.is_finite()));
            if !all_finite {
                return Err(Error::invalid(format!("client {i}"), "non-finite entry"));
            }
            for (name, m) in [("A", &cl.a), ("D", &cl.d), ("E", &cl.e)] {
                if !is_symmetric(m) {
                    return Err(Error::invalid(format!("client {i} {name}"), "must be symmetric"));
                }
            }
            let (a_min, _) = min_max_eigen(&cl.a);
            if a_min <= 0.0 {
                return Err(Error::invalid(
                    format!("client {i} A"),
                    format!("must be positive definite, smallest eigenvalue {a_min:e}"),
                ));
            }
            for (name, m) in [("D", &cl.d), ("E", &cl.e)] {
                let (lo, _) = min_max_eigen(m);
                if lo < -1e-10 * m.amax().max(1.0) {
                    return Err(Error::invalid(
                        format!("client {i} {name}"),
                        format!("must be positive semidefinite, smallest eigenvalue {lo:e}"),
                    ));
                }
            }
        }
        Ok(BilevelInstance {
            d_x,
            d_y,
            weights,
            clients,
        })
    }

    /// One client, `d_x = d_y = 1`, `A = 2, B = 1, c = 0, D = 1, y_ref = 1, E = 0`.
    ///
    /// `y*(x) = -x/2`, `Φ(x) = 1/2 (x/2 + 1)²`, unique stationary point `x = -2`.
    pub fn canonical_1d() -> Self {
        let client = ClientData {
            a: DMatrix::from_element(1, 1, 2.0),
            b: DMatrix::from_element(1, 1, 1.0),
            c: DVector::from_element(1, 0.0),
            d: DMatrix::from_element(1, 1, 1.0),
            y_ref: DVector::from_element(1, 1.0),
            e: DMatrix::from_element(1, 1, 0.0),
            x_ref: DVector::from_element(1, 0.0),
        };
        BilevelInstance::new(vec![1.0], vec![client]).expect("canonical instance is valid")
    }

    pub fn n(&self) -> usize {
        self.clients.len()
    }

    pub fn d_x(&self) -> usize {
        self.d_x
    }

    pub fn d_y(&self) -> usize {
        self.d_y
    }

    /// Client weights `p`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn clients(&self) -> &[ClientData] {
        &self.clients
    }

    pub fn client(&self, i: usize) -> Result<&ClientData> {
        self.clients.get(i).ok_or(Error::ClientIndex {
            index: i,
            n: self.clients.len(),
        })
    }

    fn check(&self, i: usize, x: &DVector<f64>, y: &DVector<f64>) -> Result<&ClientData> {
        if x.len() != self.d_x {
            return Err(Error::Dimension {
                what: "x",
                expected: self.d_x,
                got: x.len(),
            });
        }
        if y.len() != self.d_y {
            return Err(Error::Dimension {
                what: "y",
                expected: self.d_y,
                got: y.len(),
            });
        }
        self.client(i)
    }

    fn check_v(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.d_y {
            return Err(Error::Dimension {
                what: "v",
                expected: self.d_y,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// `g_i(x, y)`.
    pub fn g_value(&self, i: usize, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        let cl = self.check(i, x, y)?;
        Ok(0.5 * y.dot(&(&cl.a * y)) + x.dot(&(&cl.b * y)) + cl.c.dot(y))
    }

    /// `f_i(x, y)`.
    pub fn f_value(&self, i: usize, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        let cl = self.check(i, x, y)?;
        let dy = y - &cl.y_ref;
        let dx = x - &cl.x_ref;
        Ok(0.5 * dy.dot(&(&cl.d * &dy)) + 0.5 * dx.dot(&(&cl.e * &dx)))
    }

    /// `∇_y g_i(x, y) = A_i y + B_iᵀ x + c_i`, plus noise when sampling.
    pub fn grad_y_g(
        &self,
        i: usize,
        x: &DVector<f64>,
        y: &DVector<f64>,
        draws: Option<&mut NoisyDraws>,
    ) -> Result<DVector<f64>> {
        let cl = self.check(i, x, y)?;
        let mut g = &cl.a * y + cl.b.tr_mul(x) + &cl.c;
        if let Some(nd) = draws.filter(|nd| nd.model.enabled) {
            let s = nd.model.sigma_g;
            add_gaussian(&mut g, s, &mut nd.g);
        }
        Ok(g)
    }

    /// `∇_x f_i(x, y) = E_i (x - x_ref_i)`, plus noise when sampling.
    pub fn grad_x_f(
        &self,
        i: usize,
        x: &DVector<f64>,
        y: &DVector<f64>,
        draws: Option<&mut NoisyDraws>,
    ) -> Result<DVector<f64>> {
        let cl = self.check(i, x, y)?;
        let mut g = &cl.e * (x - &cl.x_ref);
        if let Some(nd) = draws.filter(|nd| nd.model.enabled) {
            let s = nd.model.sigma_f;
            add_gaussian(&mut g, s, &mut nd.f);
        }
        Ok(g)
    }

    /// `∇_y f_i(x, y) = D_i (y - y_ref_i)`; sampled values are noisy and
    /// norm-clipped to the configured cap.
    pub fn grad_y_f(
        &self,
        i: usize,
        x: &DVector<f64>,
        y: &DVector<f64>,
        draws: Option<&mut NoisyDraws>,
    ) -> Result<DVector<f64>> {
        let cl = self.check(i, x, y)?;
        let mut g = &cl.d * (y - &cl.y_ref);
        if let Some(nd) = draws.filter(|nd| nd.model.enabled) {
            let s = nd.model.sigma_f;
            add_gaussian(&mut g, s, &mut nd.f);
            let norm = g.norm();
            if norm > nd.clip.grad_f_cap {
                g *= nd.clip.grad_f_cap / norm;
            }
        }
        Ok(g)
    }

    /// `∇²_yy g_i · v`. A sampled Hessian is `A_i + Ξ` with symmetric
    /// Gaussian `Ξ`, eigenvalue-clipped into the configured interval.
    pub fn hvp_yy_g(
        &self,
        i: usize,
        x: &DVector<f64>,
        y: &DVector<f64>,
        v: &DVector<f64>,
        draws: Option<&mut NoisyDraws>,
    ) -> Result<DVector<f64>> {
        let cl = self.check(i, x, y)?;
        self.check_v(v)?;
        match draws.filter(|nd| nd.model.enabled) {
            None => Ok(&cl.a * v),
            Some(nd) => {
                let sampled = nd.sample_hessian(&cl.a);
                Ok(sampled * v)
            }
        }
    }

    /// `∇²_xy g_i · v = B_i v`, plus noise when sampling.
    pub fn jvp_xy_g(
        &self,
        i: usize,
        x: &DVector<f64>,
        y: &DVector<f64>,
        v: &DVector<f64>,
        draws: Option<&mut NoisyDraws>,
    ) -> Result<DVector<f64>> {
        let cl = self.check(i, x, y)?;
        self.check_v(v)?;
        let mut out = &cl.b * v;
        if let Some(nd) = draws.filter(|nd| nd.model.enabled) {
            let s = nd.model.sigma_gg;
            add_gaussian(&mut out, s, &mut nd.hess);
        }
        Ok(out)
    }

    /// `∇_v R_i = ∇²_yy g_i v - ∇_y f_i`.
    pub fn grad_v_r(
        &self,
        i: usize,
        x: &DVector<f64>,
        y: &DVector<f64>,
        v: &DVector<f64>,
        mut draws: Option<&mut NoisyDraws>,
    ) -> Result<DVector<f64>> {
        let hv = self.hvp_yy_g(i, x, y, v, draws.as_deref_mut())?;
        let gf = self.grad_y_f(i, x, y, draws)?;
        Ok(hv - gf)
    }

    /// Local hypergradient estimate `∇_x f_i - ∇²_xy g_i v`.
    pub fn local_hypergrad(
        &self,
        i: usize,
        x: &DVector<f64>,
        y: &DVector<f64>,
        v: &DVector<f64>,
        mut draws: Option<&mut NoisyDraws>,
    ) -> Result<DVector<f64>> {
        let gx = self.grad_x_f(i, x, y, draws.as_deref_mut())?;
        let jv = self.jvp_xy_g(i, x, y, v, draws)?;
        Ok(gx - jv)
    }
}

/// Adds `N(0, sigma²/d)` to every coordinate so the total variance is `sigma²`.
fn add_gaussian(g: &mut DVector<f64>, sigma: f64, rng: &mut Stream) {
    if sigma == 0.0 {
        return;
    }
    let s = sigma / (g.len() as f64).sqrt();
    for gi in g.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *gi += s * z;
    }
}

/// Smoothness and regularity constants of an instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothnessConstants {
    /// `min_i λ_min(A_i)`.
    pub mu_g: f64,
    /// `max_i max(λ_max(A_i), σ_max(B_i), λ_max(D_i), λ_max(E_i))`.
    pub l1: f64,
    /// Cap on sampled `∇_y f` norms, standing in for the Lipschitz constant of `f`.
    pub lf_cap: f64,
}

impl SmoothnessConstants {
    pub fn of(instance: &BilevelInstance, lf_cap: f64) -> Result<Self> {
        if !(lf_cap.is_finite() && lf_cap > 0.0) {
            return Err(Error::invalid("lf_cap", format!("must be > 0, got {lf_cap}")));
        }
        let mut mu_g = f64::INFINITY;
        let mut l1: f64 = 0.0;
        for cl in instance.clients() {
            let (lo, hi) = min_max_eigen(&cl.a);
            mu_g = mu_g.min(lo);
            l1 = l1.max(hi);
            let sv = cl.b.singular_values();
            l1 = l1.max(sv.iter().copied().fold(0.0, f64::max));
            l1 = l1.max(min_max_eigen(&cl.d).1);
            l1 = l1.max(min_max_eigen(&cl.e).1);
        }
        Ok(SmoothnessConstants { mu_g, l1, lf_cap })
    }

    /// Projection radius `Lf_cap / μ_g`.
    pub fn radius(&self) -> f64 {
        self.lf_cap / self.mu_g
    }

    pub fn clip_bounds(&self) -> ClipBounds {
        ClipBounds {
            hess_min: self.mu_g,
            hess_max: self.l1,
            grad_f_cap: self.lf_cap,
        }
    }
}

/// Standard deviations of the stochastic oracles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma_f: f64,
    pub sigma_g: f64,
    pub sigma_gg: f64,
    pub enabled: bool,
}

impl NoiseModel {
    pub fn off() -> Self {
        NoiseModel {
            sigma_f: 0.0,
            sigma_g: 0.0,
            sigma_gg: 0.0,
            enabled: false,
        }
    }

    pub fn uniform(sigma: f64) -> Self {
        NoiseModel {
            sigma_f: sigma,
            sigma_g: sigma,
            sigma_gg: sigma,
            enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [
            ("sigma_f", self.sigma_f),
            ("sigma_g", self.sigma_g),
            ("sigma_gg", self.sigma_gg),
        ] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::invalid(name, format!("must be >= 0, got {s}")));
            }
        }
        Ok(())
    }
}

/// Safeguards applied to sampled oracles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipBounds {
    /// Lower eigenvalue bound for sampled Hessians.
    pub hess_min: f64,
    /// Upper eigenvalue bound for sampled Hessians.
    pub hess_max: f64,
    /// Norm cap for sampled `∇_y f`.
    pub grad_f_cap: f64,
}

/// Noise streams for one oracle evaluation site.
///
/// Holds separate streams for lower-level gradient noise, upper-level
/// gradient noise and second-order noise; consecutive draws within one
/// stream are independent.
#[derive(Clone, Debug)]
pub struct NoisyDraws {
    pub model: NoiseModel,
    pub clip: ClipBounds,
    g: Stream,
    f: Stream,
    hess: Stream,
}

impl NoisyDraws {
    /// Streams keyed by `(seed, round, client, ·, step)`.
    pub fn new(
        model: NoiseModel,
        clip: ClipBounds,
        seed: u64,
        round: usize,
        client: usize,
        step: usize,
    ) -> Self {
        let key = |p| rng_stream(seed, round as u64, client as u64, p, step as u64);
        NoisyDraws {
            model,
            clip,
            g: key(Purpose::GNoise),
            f: key(Purpose::FNoise),
            hess: key(Purpose::HessNoise),
        }
    }

    /// `A + Ξ` with `E‖Ξ‖_F² = σ_gg²`, eigenvalues clipped into the bounds.
    fn sample_hessian(&mut self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let d = a.nrows();
        let s = self.model.sigma_gg / d as f64;
        let mut m = a.clone();
        if s > 0.0 {
            for r in 0..d {
                for c in r..d {
                    let z: f64 = self.hess.sample(StandardNormal);
                    m[(r, c)] += s * z;
                    if r != c {
                        m[(c, r)] += s * z;
                    }
                }
            }
        }
        let mut eig = SymmetricEigen::new(m);
        let (lo, hi) = (self.clip.hess_min, self.clip.hess_max);
        eig.eigenvalues.iter_mut().for_each(|l| *l = l.clamp(lo, hi));
        let q = &eig.eigenvectors;
        let out = q * DMatrix::from_diagonal(&eig.eigenvalues) * q.transpose();
        (&out + out.transpose()) * 0.5
    }
}

/// How client weights `p` are generated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightProfile {
    /// `p_i = 1/n`.
    Uniform,
    /// `p_i ∝ i + 1`.
    Linear,
    /// `p_i ∝ U(0.5, 1.5)`.
    Random,
}

/// Parameters of [`make_synthetic_instance`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub n: usize,
    pub d_x: usize,
    pub d_y: usize,
    pub mu_g_target: f64,
    pub l1_target: f64,
    /// In `[0, 1]`; zero gives identical clients.
    pub heterogeneity: f64,
    pub weight_profile: WeightProfile,
}

impl InstanceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::invalid("n", "must be >= 1"));
        }
        if self.d_x < 1 {
            return Err(Error::invalid("d_x", "must be >= 1"));
        }
        if self.d_y < 1 {
            return Err(Error::invalid("d_y", "must be >= 1"));
        }
        if !(self.mu_g_target.is_finite() && self.mu_g_target > 0.0) {
            return Err(Error::invalid(
                "mu_g",
                format!("must be > 0, got {}", self.mu_g_target),
            ));
        }
        if !(self.l1_target.is_finite() && self.l1_target >= self.mu_g_target) {
            return Err(Error::invalid(
                "l1",
                format!(
                    "must be >= mu_g ({}), got {}",
                    self.mu_g_target, self.l1_target
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.heterogeneity) {
            return Err(Error::invalid(
                "heterogeneity",
                format!("must lie in [0, 1], got {}", self.heterogeneity),
            ));
        }
        Ok(())
    }
}

fn gaussian_matrix(rng: &mut Stream, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn gaussian_vector(rng: &mut Stream, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Symmetric matrix with a random eigenbasis and eigenvalues uniform in `[lo, hi]`.
fn random_spectrum(rng: &mut Stream, d: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = gaussian_matrix(rng, d, d, 1.0).qr().q();
    let diag = DVector::from_fn(d, |_, _| lo + (hi - lo) * rng.random::<f64>());
    let m = &q * DMatrix::from_diagonal(&diag) * q.transpose();
    (&m + m.transpose()) * 0.5
}

struct RawClient {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DVector<f64>,
    d: DMatrix<f64>,
    y_ref: DVector<f64>,
    e: DMatrix<f64>,
    x_ref: DVector<f64>,
}

fn raw_client(spec: &InstanceSpec, rng: &mut Stream) -> RawClient {
    let (mu, l1) = (spec.mu_g_target, spec.l1_target);
    let b_scale = 0.5 * l1 / ((spec.d_x + spec.d_y) as f64).sqrt();
    RawClient {
        a: random_spectrum(rng, spec.d_y, mu, l1),
        b: gaussian_matrix(rng, spec.d_x, spec.d_y, b_scale),
        c: gaussian_vector(rng, spec.d_y),
        d: random_spectrum(rng, spec.d_y, 0.0, l1),
        y_ref: gaussian_vector(rng, spec.d_y),
        e: random_spectrum(rng, spec.d_x, 0.5 * mu, 0.5 * l1),
        x_ref: gaussian_vector(rng, spec.d_x),
    }
}

/// Random instance whose clients blend a shared base with private draws.
///
/// Each client's data is `(1 - h)·base + h·private` with `h` the
/// heterogeneity level. Convex blends keep every `A_i` spectrum inside
/// `[mu_g_target, l1_target]` and every `D_i`, `E_i` PSD.
pub fn make_synthetic_instance(spec: &InstanceSpec, seed: u64) -> Result<BilevelInstance> {
    spec.validate()?;
    let h = spec.heterogeneity;
    let mut base_rng = rng_stream(seed, 0, u64::MAX, Purpose::Instance, 0);
    let base = raw_client(spec, &mut base_rng);
    let clients = (0..spec.n)
        .map(|i| {
            let mut rng = rng_stream(seed, 0, i as u64, Purpose::Instance, 0);
            let own = raw_client(spec, &mut rng);
            let blend_m = |b: &DMatrix<f64>, o: &DMatrix<f64>| b * (1.0 - h) + o * h;
            let blend_v = |b: &DVector<f64>, o: &DVector<f64>| b * (1.0 - h) + o * h;
            ClientData {
                a: blend_m(&base.a, &own.a),
                b: blend_m(&base.b, &own.b),
                c: blend_v(&base.c, &own.c),
                d: blend_m(&base.d, &own.d),
                y_ref: blend_v(&base.y_ref, &own.y_ref),
                e: blend_m(&base.e, &own.e),
                x_ref: blend_v(&base.x_ref, &own.x_ref),
            }
        })
        .collect();
    let raw: Vec<f64> = match spec.weight_profile {
        WeightProfile::Uniform => vec![1.0; spec.n],
        WeightProfile::Linear => (0..spec.n).map(|i| (i + 1) as f64).collect(),
        WeightProfile::Random => {
            let mut rng = rng_stream(seed, 0, u64::MAX - 1, Purpose::Instance, 1);
            (0..spec.n).map(|_| rng.random_range(0.5..1.5)).collect()
        }
    };
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    BilevelInstance::new(weights, clients)
}
