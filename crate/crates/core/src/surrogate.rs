//! One-hidden-layer sigmoid MLPs, one per cell output, trained with
//! Levenberg-Marquardt.
//!
//! Inputs and targets are min-max scaled to [−1, 1] using training-split
//! statistics. A network with `H` hidden units has `6H + 1` parameters,
//! stored in the order `W_in` (row-major, H×4), `b_in`, `w_out`, `b_out`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::Dataset;
use crate::par;
use crate::types::{CellResponse, Input, InputRanges, OperatingPoint, Output, Range};

pub const N_IN: usize = 4;
pub const MAGIC: &str = "SOEC-MLP-ENSEMBLE";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SurrogateError {
    #[error("training split is empty")]
    EmptyTraining,
    #[error("training failed for {output}: {reason}")]
    Training { output: &'static str, reason: String },
    #[error("hidden layer size must be at least 1 (got {0})")]
    Architecture(usize),
}

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a model file: expected magic `{MAGIC}` at byte offset 0")]
    BadMagic,
    #[error("unsupported model file version {found} (expected {FORMAT_VERSION})")]
    Version { found: String },
    #[error("unexpected end of file at byte offset {offset}: expected {expected}")]
    UnexpectedEnd { offset: usize, expected: String },
    #[error("byte offset {offset}: expected {expected}, found `{found}`")]
    Parse {
        offset: usize,
        expected: String,
        found: String,
    },
}

/// Affine map from `[lo, hi]` onto `[−1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    pub lo: f64,
    pub hi: f64,
}

impl Scaling {
    /// Fits the map to the extremes of `values`. A constant column gets a
    /// unit-width window centred on its value so the map stays bijective.
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Scaling {
        let (lo, hi) = values
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !(lo.is_finite() && hi.is_finite()) {
            return Scaling { lo: -1.0, hi: 1.0 };
        }
        if hi - lo <= 1e-12 * lo.abs().max(1.0) {
            Scaling { lo: lo - 1.0, hi: lo + 1.0 }
        } else {
            Scaling { lo, hi }
        }
    }

    pub fn forward(&self, x: f64) -> f64 {
        2.0 * (x - self.lo) / (self.hi - self.lo) - 1.0
    }

    pub fn inverse(&self, z: f64) -> f64 {
        self.lo + 0.5 * (z + 1.0) * (self.hi - self.lo)
    }

    /// dz/dx.
    pub fn gain(&self) -> f64 {
        2.0 / (self.hi - self.lo)
    }
}

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub target: Output,
    pub n_hidden: usize,
    /// Row-major `n_hidden × 4`.
    pub weights_in: Vec<f64>,
    pub bias_in: Vec<f64>,
    pub weights_out: Vec<f64>,
    pub bias_out: f64,
    pub input_scaling: [Scaling; N_IN],
    pub output_scaling: Scaling,
}

impl MlpModel {
    /// All-zero network with identity-like scalings.
    pub fn zeros(target: Output, n_hidden: usize) -> MlpModel {
        MlpModel {
            target,
            n_hidden,
            weights_in: vec![0.0; n_hidden * N_IN],
            bias_in: vec![0.0; n_hidden],
            weights_out: vec![0.0; n_hidden],
            bias_out: 0.0,
            input_scaling: [Scaling { lo: -1.0, hi: 1.0 }; N_IN],
            output_scaling: Scaling { lo: -1.0, hi: 1.0 },
        }
    }

    pub fn n_params(&self) -> usize {
        param_count(self.n_hidden)
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.extend_from_slice(&self.weights_in);
        p.extend_from_slice(&self.bias_in);
        p.extend_from_slice(&self.weights_out);
        p.push(self.bias_out);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let h = self.n_hidden;
        assert_eq!(p.len(), self.n_params());
        self.weights_in.copy_from_slice(&p[..4 * h]);
        self.bias_in.copy_from_slice(&p[4 * h..5 * h]);
        self.weights_out.copy_from_slice(&p[5 * h..6 * h]);
        self.bias_out = p[6 * h];
    }

    pub fn scale_inputs(&self, x: &[f64; N_IN]) -> [f64; N_IN] {
        std::array::from_fn(|k| self.input_scaling[k].forward(x[k]))
    }

    /// Network output in scaled units for scaled inputs `z`.
    pub fn forward_scaled(&self, z: &[f64; N_IN]) -> f64 {
        let mut y = self.bias_out;
        for j in 0..self.n_hidden {
            let w = &self.weights_in[4 * j..4 * j + 4];
            let a = self.bias_in[j] + w[0] * z[0] + w[1] * z[1] + w[2] * z[2] + w[3] * z[3];
            y += self.weights_out[j] * sigmoid(a);
        }
        y
    }

    /// Gradient of [`forward_scaled`](Self::forward_scaled) with respect to
    /// the parameter vector, written into `row`. Returns the output.
    pub fn jacobian_row(&self, z: &[f64; N_IN], row: &mut [f64]) -> f64 {
        let h = self.n_hidden;
        let mut y = self.bias_out;
        for j in 0..h {
            let w = &self.weights_in[4 * j..4 * j + 4];
            let a = self.bias_in[j] + w[0] * z[0] + w[1] * z[1] + w[2] * z[2] + w[3] * z[3];
            let s = sigmoid(a);
            let v = self.weights_out[j];
            y += v * s;
            let ds = v * s * (1.0 - s);
            for k in 0..4 {
                row[4 * j + k] = ds * z[k];
            }
            row[4 * h + j] = ds;
            row[5 * h + j] = s;
        }
        row[6 * h] = 1.0;
        y
    }

    /// Prediction in physical units.
    pub fn evaluate(&self, x: &[f64; N_IN]) -> f64 {
        self.output_scaling.inverse(self.forward_scaled(&self.scale_inputs(x)))
    }

    /// Upper bound on |∂y/∂x_k| over all inputs, in physical units.
    pub fn lipschitz_bound(&self, k: usize) -> f64 {
        let sum: f64 = (0..self.n_hidden)
            .map(|j| (self.weights_out[j] * self.weights_in[4 * j + k]).abs())
            .sum();
        0.25 * sum * self.input_scaling[k].gain() / self.output_scaling.gain()
    }

    fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }
}

pub fn param_count(n_hidden: usize) -> usize {
    6 * n_hidden + 1
}

/// Hidden-layer sizes per output, in [`Output::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub hidden: [usize; 5],
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            hidden: [10, 10, 10, 5, 5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub max_epochs: usize,
    pub grad_tol: f64,
    pub lambda_init: f64,
    pub lambda_max: f64,
    pub lambda_down: f64,
    pub lambda_up: f64,
    pub restarts: usize,
    /// Initial weights are uniform in `[−init_scale, init_scale]`.
    pub init_scale: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            max_epochs: 500,
            grad_tol: 1e-8,
            lambda_init: 1e-3,
            lambda_max: 1e10,
            lambda_down: 0.1,
            lambda_up: 10.0,
            restarts: 3,
            init_scale: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Gradient,
    LambdaLimit,
    MaxEpochs,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::Gradient => "gradient",
            StopReason::LambdaLimit => "lambda-limit",
            StopReason::MaxEpochs => "max-epochs",
        }
    }

    fn from_name(s: &str) -> Option<StopReason> {
        [StopReason::Gradient, StopReason::LambdaLimit, StopReason::MaxEpochs]
            .into_iter()
            .find(|r| r.name() == s)
    }
}

/// Outcome of fitting one network. RMSEs are in physical units; R² is NaN
/// for an empty split.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub train_rmse: f64,
    pub test_rmse: f64,
    pub train_r2: f64,
    pub test_r2: f64,
    pub epochs: usize,
    pub restart: usize,
    pub stop: StopReason,
    /// Half sum of squared scaled residuals after each accepted step,
    /// starting with the initial loss. Not persisted.
    pub loss_history: Vec<f64>,
}

struct Scaled {
    z: Vec<[f64; N_IN]>,
    t: Vec<f64>,
}

fn half_sse(model: &MlpModel, data: &Scaled) -> f64 {
    0.5 * data
        .z
        .iter()
        .zip(&data.t)
        .map(|(z, t)| {
            let r = model.forward_scaled(z) - t;
            r * r
        })
        .sum::<f64>()
}

fn lm_run(mut model: MlpModel, data: &Scaled, cfg: &LmConfig) -> (MlpModel, usize, StopReason, Vec<f64>) {
    let n = data.z.len();
    let p = model.n_params();
    let mut jac = DMatrix::<f64>::zeros(n, p);
    let mut res = DVector::<f64>::zeros(n);
    let mut row = vec![0.0; p];
    let mut fill = |m: &MlpModel, jac: &mut DMatrix<f64>, res: &mut DVector<f64>| {
        for i in 0..n {
            let y = m.jacobian_row(&data.z[i], &mut row);
            res[i] = y - data.t[i];
            for (c, v) in row.iter().enumerate() {
                jac[(i, c)] = *v;
            }
        }
    };
    fill(&model, &mut jac, &mut res);
    let mut loss = 0.5 * res.norm_squared();
    let mut history = vec![loss];
    let mut lambda = cfg.lambda_init;
    let mut theta = DVector::from_vec(model.params());
    let mut trial = model.clone();
    for epoch in 1..=cfg.max_epochs {
        let grad = jac.tr_mul(&res);
        if grad.norm() < cfg.grad_tol {
            return (model, epoch - 1, StopReason::Gradient, history);
        }
        let jtj = jac.tr_mul(&jac);
        loop {
            if lambda > cfg.lambda_max {
                return (model, epoch - 1, StopReason::LambdaLimit, history);
            }
            let mut m = jtj.clone();
            for d in 0..p {
                m[(d, d)] += lambda;
            }
            let Some(chol) = m.cholesky() else {
                lambda *= cfg.lambda_up;
                continue;
            };
            let step = chol.solve(&grad);
            let cand = &theta - &step;
            trial.set_params(cand.as_slice());
            let new_loss = half_sse(&trial, data);
            if new_loss.is_finite() && new_loss < loss {
                theta = cand;
                std::mem::swap(&mut model, &mut trial);
                loss = new_loss;
                history.push(loss);
                lambda = (lambda * cfg.lambda_down).max(1e-15);
                fill(&model, &mut jac, &mut res);
                break;
            }
            lambda *= cfg.lambda_up;
        }
    }
    (model, cfg.max_epochs, StopReason::MaxEpochs, history)
}

fn rmse_r2(model: &MlpModel, x: &[[f64; N_IN]], y: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (xi, &yi) in x.iter().zip(y) {
        let r = model.evaluate(xi) - yi;
        ss_res += r * r;
        ss_tot += (yi - mean) * (yi - mean);
    }
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { f64::NAN };
    ((ss_res / n).sqrt(), r2)
}

fn restart_seed(seed: u64, target: Output, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((target as u64) << 16) | restart as u64);
    rng
}

/// Fits one network to `(x, y)` with best-of-`cfg.restarts` LM runs, chosen
/// by test RMSE (train RMSE when the test set is empty).
#[allow(clippy::too_many_arguments)]
pub fn fit_mlp(
    target: Output,
    n_hidden: usize,
    x_train: &[[f64; N_IN]],
    y_train: &[f64],
    x_test: &[[f64; N_IN]],
    y_test: &[f64],
    cfg: &LmConfig,
    seed: u64,
) -> Result<(MlpModel, FitReport), SurrogateError> {
    if n_hidden == 0 {
        return Err(SurrogateError::Architecture(0));
    }
    if x_train.is_empty() {
        return Err(SurrogateError::EmptyTraining);
    }
    if x_train.len() < 10 * param_count(n_hidden) {
        log::warn!(
            "{}: {} training rows for {} parameters (fewer than 10 per parameter)",
            target.name(),
            x_train.len(),
            param_count(n_hidden)
        );
    }
    let input_scaling: [Scaling; N_IN] = std::array::from_fn(|k| Scaling::fit(x_train.iter().map(|x| x[k])));
    let output_scaling = Scaling::fit(y_train.iter().copied());
    let mut base = MlpModel::zeros(target, n_hidden);
    base.input_scaling = input_scaling;
    base.output_scaling = output_scaling;
    let data = Scaled {
        z: x_train.iter().map(|x| base.scale_inputs(x)).collect(),
        t: y_train.iter().map(|&y| output_scaling.forward(y)).collect(),
    };

    let mut best: Option<(MlpModel, FitReport, f64)> = None;
    for restart in 0..cfg.restarts.max(1) {
        let mut rng = restart_seed(seed, target, restart);
        let mut model = base.clone();
        let init: Vec<f64> = (0..model.n_params())
            .map(|_| rng.gen_range(-cfg.init_scale..=cfg.init_scale))
            .collect();
        model.set_params(&init);
        let (model, epochs, stop, loss_history) = lm_run(model, &data, cfg);
        if !model.is_finite() {
            continue;
        }
        let (train_rmse, train_r2) = rmse_r2(&model, x_train, y_train);
        let (test_rmse, test_r2) = rmse_r2(&model, x_test, y_test);
        let score = if x_test.is_empty() { train_rmse } else { test_rmse };
        log::debug!(
            "{} restart {restart}: {epochs} epochs ({}), train RMSE {train_rmse:e}, test RMSE {test_rmse:e}",
            target.name(),
            stop.name()
        );
        let better = best.as_ref().is_none_or(|(_, _, s)| score < *s);
        if better {
            let report = FitReport {
                train_rmse,
                test_rmse,
                train_r2,
                test_r2,
                epochs,
                restart,
                stop,
                loss_history,
            };
            best = Some((model, report, score));
        }
    }
    best.map(|(m, r, _)| (m, r)).ok_or_else(|| SurrogateError::Training {
        output: target.name(),
        reason: "every restart produced non-finite weights".into(),
    })
}

/// Five networks, one per [`Output`], plus the input box they were trained
/// for.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateEnsemble {
    pub models: [MlpModel; 5],
    pub domain: InputRanges,
    pub reports: Option<[FitReport; 5]>,
}

/// A surrogate prediction and whether the point lies outside the training
/// box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub response: CellResponse,
    pub extrapolated: bool,
}

impl SurrogateEnsemble {
    pub fn model(&self, output: Output) -> &MlpModel {
        &self.models[output as usize]
    }

    pub fn hidden_sizes(&self) -> [usize; 5] {
        self.models.each_ref().map(|m| m.n_hidden)
    }

    pub fn predict(&self, op: &OperatingPoint) -> CellResponse {
        let x = op.to_array();
        CellResponse::from_array(self.models.each_ref().map(|m| m.evaluate(&x)))
    }

    pub fn predict_checked(&self, op: &OperatingPoint) -> Prediction {
        Prediction {
            response: self.predict(op),
            extrapolated: !self.domain.contains(op),
        }
    }

    pub fn to_text(&self) -> String {
        write_model(self)
    }

    pub fn from_text(text: &str) -> Result<SurrogateEnsemble, ModelFileError> {
        parse_model(text)
    }
}

/// Trains the five networks on the dataset's train split and scores them on
/// its test split.
pub fn train_lm(
    ds: &Dataset,
    arch: &Architecture,
    cfg: &LmConfig,
    seed: u64,
) -> Result<SurrogateEnsemble, SurrogateError> {
    let x_train: Vec<[f64; N_IN]> = ds.train().map(|p| p.inputs.to_array()).collect();
    let x_test: Vec<[f64; N_IN]> = ds.test().map(|p| p.inputs.to_array()).collect();
    if x_train.is_empty() {
        return Err(SurrogateError::EmptyTraining);
    }
    let results = par::map(&Output::ALL, |&out| {
        let y_train: Vec<f64> = ds.train().map(|p| p.outputs.get(out)).collect();
        let y_test: Vec<f64> = ds.test().map(|p| p.outputs.get(out)).collect();
        fit_mlp(out, arch.hidden[out as usize], &x_train, &y_train, &x_test, &y_test, cfg, seed)
    });
    let mut models = Vec::with_capacity(5);
    let mut reports = Vec::with_capacity(5);
    for r in results {
        let (m, rep) = r?;
        models.push(m);
        reports.push(rep);
    }
    let models: [MlpModel; 5] = models.try_into().expect("five outputs");
    let reports: [FitReport; 5] = reports.try_into().expect("five outputs");
    Ok(SurrogateEnsemble {
        models,
        domain: InputRanges::DOMAIN,
        reports: Some(reports),
    })
}

// ---------------------------------------------------------------------------
// Model file
//
// Whitespace-separated text. Floats use Rust's shortest round-trip `{:e}`
// notation, so a save/load cycle is bit-exact.
//
//   SOEC-MLP-ENSEMBLE 1
//   domain <lo hi> x4                      (t_fur q_air q_st v_cell)
//   model <output> <hidden>
//   input_scaling <lo hi> x4
//   output_scaling <lo hi>
//   weights_in <hidden rows of 4>
//   bias_in <hidden>
//   weights_out <hidden>
//   bias_out <1>
//   [report train_rmse test_rmse train_r2 test_r2 epochs restart stop]
//   ... five model blocks in output order ...
//   end

fn write_model(ens: &SurrogateEnsemble) -> String {
    let mut s = String::new();
    let f = |x: f64| format!("{x:e}");
    writeln!(s, "{MAGIC} {FORMAT_VERSION}").unwrap();
    s.push_str("domain");
    for r in ens.domain.to_array() {
        write!(s, " {} {}", f(r.lo), f(r.hi)).unwrap();
    }
    s.push('\n');
    for (k, m) in ens.models.iter().enumerate() {
        writeln!(s, "model {} {}", m.target.name(), m.n_hidden).unwrap();
        s.push_str("input_scaling");
        for sc in &m.input_scaling {
            write!(s, " {} {}", f(sc.lo), f(sc.hi)).unwrap();
        }
        writeln!(s, "\noutput_scaling {} {}", f(m.output_scaling.lo), f(m.output_scaling.hi)).unwrap();
        s.push_str("weights_in\n");
        for row in m.weights_in.chunks(4) {
            let cells: Vec<String> = row.iter().map(|&x| f(x)).collect();
            writeln!(s, "{}", cells.join(" ")).unwrap();
        }
        let line = |v: &[f64]| v.iter().map(|&x| f(x)).collect::<Vec<_>>().join(" ");
        writeln!(s, "bias_in {}", line(&m.bias_in)).unwrap();
        writeln!(s, "weights_out {}", line(&m.weights_out)).unwrap();
        writeln!(s, "bias_out {}", f(m.bias_out)).unwrap();
        if let Some(reps) = &ens.reports {
            let r = &reps[k];
            writeln!(
                s,
                "report {} {} {} {} {} {} {}",
                f(r.train_rmse),
                f(r.test_rmse),
                f(r.train_r2),
                f(r.test_r2),
                r.epochs,
                r.restart,
                r.stop.name()
            )
            .unwrap();
        }
    }
    s.push_str("end\n");
    s
}

struct Tokens<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self, expected: &str) -> Result<(usize, &'a str), ModelFileError> {
        let bytes = self.text.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos >= bytes.len() {
            return Err(ModelFileError::UnexpectedEnd {
                offset: self.pos,
                expected: expected.to_owned(),
            });
        }
        let start = self.pos;
        while self.pos < bytes.len() && !bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        Ok((start, &self.text[start..self.pos]))
    }

    fn peek(&mut self) -> Option<&'a str> {
        let save = self.pos;
        let t = self.next("").ok().map(|(_, t)| t);
        self.pos = save;
        t
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ModelFileError> {
        let (offset, t) = self.next(&format!("`{kw}`"))?;
        if t == kw {
            Ok(())
        } else {
            Err(ModelFileError::Parse {
                offset,
                expected: format!("`{kw}`"),
                found: t.to_owned(),
            })
        }
    }

    fn float(&mut self, what: &str) -> Result<f64, ModelFileError> {
        let (offset, t) = self.next(what)?;
        t.parse::<f64>().map_err(|_| ModelFileError::Parse {
            offset,
            expected: what.to_owned(),
            found: t.to_owned(),
        })
    }

    fn finite(&mut self, what: &str) -> Result<f64, ModelFileError> {
        let save = self.pos;
        let v = self.float(what)?;
        if v.is_finite() {
            Ok(v)
        } else {
            self.pos = save;
            let (offset, t) = self.next(what)?;
            Err(ModelFileError::Parse {
                offset,
                expected: format!("finite {what}"),
                found: t.to_owned(),
            })
        }
    }

    fn usize(&mut self, what: &str) -> Result<usize, ModelFileError> {
        let (offset, t) = self.next(what)?;
        t.parse::<usize>().map_err(|_| ModelFileError::Parse {
            offset,
            expected: what.to_owned(),
            found: t.to_owned(),
        })
    }

    fn range(&mut self, what: &str) -> Result<(f64, f64, usize), ModelFileError> {
        let offset = self.pos;
        let lo = self.finite(what)?;
        let hi = self.finite(what)?;
        Ok((lo, hi, offset))
    }

    fn scaling(&mut self, what: &str) -> Result<Scaling, ModelFileError> {
        let (lo, hi, offset) = self.range(what)?;
        if hi > lo {
            Ok(Scaling { lo, hi })
        } else {
            Err(ModelFileError::Parse {
                offset,
                expected: format!("{what} with lo < hi"),
                found: format!("{lo} {hi}"),
            })
        }
    }
}

fn parse_model(text: &str) -> Result<SurrogateEnsemble, ModelFileError> {
    let mut tk = Tokens { text, pos: 0 };
    match tk.next("magic") {
        Ok((_, t)) if t == MAGIC => {}
        _ => return Err(ModelFileError::BadMagic),
    }
    let (_, v) = tk.next("format version")?;
    if v != FORMAT_VERSION.to_string() {
        return Err(ModelFileError::Version { found: v.to_owned() });
    }
    tk.keyword("domain")?;
    let mut domain = [Range::new(0.0, 1.0); 4];
    for (k, r) in domain.iter_mut().enumerate() {
        let s = tk.scaling(&format!("domain range for {}", Input::ALL[k].name()))?;
        *r = Range::new(s.lo, s.hi);
    }
    let mut models = Vec::with_capacity(5);
    let mut reports = Vec::with_capacity(5);
    for out in Output::ALL {
        tk.keyword("model")?;
        tk.keyword(out.name())?;
        let h_offset = tk.pos;
        let h = tk.usize("hidden layer size")?;
        if h == 0 || h > 100_000 {
            return Err(ModelFileError::Parse {
                offset: h_offset,
                expected: "hidden layer size in 1..=100000".into(),
                found: h.to_string(),
            });
        }
        let mut m = MlpModel::zeros(out, h);
        tk.keyword("input_scaling")?;
        for k in 0..N_IN {
            m.input_scaling[k] = tk.scaling("input scaling")?;
        }
        tk.keyword("output_scaling")?;
        m.output_scaling = tk.scaling("output scaling")?;
        tk.keyword("weights_in")?;
        for w in m.weights_in.iter_mut() {
            *w = tk.finite("input weight")?;
        }
        tk.keyword("bias_in")?;
        for b in m.bias_in.iter_mut() {
            *b = tk.finite("hidden bias")?;
        }
        tk.keyword("weights_out")?;
        for w in m.weights_out.iter_mut() {
            *w = tk.finite("output weight")?;
        }
        tk.keyword("bias_out")?;
        m.bias_out = tk.finite("output bias")?;
        if tk.peek() == Some("report") {
            tk.keyword("report")?;
            let train_rmse = tk.float("train RMSE")?;
            let test_rmse = tk.float("test RMSE")?;
            let train_r2 = tk.float("train R2")?;
            let test_r2 = tk.float("test R2")?;
            let epochs = tk.usize("epoch count")?;
            let restart = tk.usize("restart index")?;
            let (offset, s) = tk.next("stop reason")?;
            let stop = StopReason::from_name(s).ok_or_else(|| ModelFileError::Parse {
                offset,
                expected: "stop reason".into(),
                found: s.to_owned(),
            })?;
            reports.push(FitReport {
                train_rmse,
                test_rmse,
                train_r2,
                test_r2,
                epochs,
                restart,
                stop,
                loss_history: Vec::new(),
            });
        }
        models.push(m);
    }
    tk.keyword("end")?;
    if let Ok((offset, t)) = tk.next("") {
        return Err(ModelFileError::Parse {
            offset,
            expected: "end of file".into(),
            found: t.to_owned(),
        });
    }
    let reports = match reports.len() {
        0 => None,
        5 => Some(reports.try_into().expect("five reports")),
        _ => {
            return Err(ModelFileError::Parse {
                offset: text.len(),
                expected: "a report for every model or none".into(),
                found: format!("{} reports", reports.len()),
            })
        }
    };
    Ok(SurrogateEnsemble {
        models: models.try_into().expect("five models"),
        domain: InputRanges {
            t_fur: domain[0],
            q_air: domain[1],
            q_st: domain[2],
            v_cell: domain[3],
        },
        reports,
    })
}

pub fn save_model(ens: &SurrogateEnsemble, path: &Path) -> Result<(), ModelFileError> {
    std::fs::write(path, write_model(ens)).map_err(|source| ModelFileError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<SurrogateEnsemble, ModelFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| ModelFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_model(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    fn random_model(seed: u64, h: usize) -> MlpModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = MlpModel::zeros(Output::IUp, h);
        let p: Vec<f64> = (0..m.n_params()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        m.set_params(&p);
        m.input_scaling = [
            Scaling { lo: 600.0, hi: 750.0 },
            Scaling { lo: 40.0, hi: 300.0 },
            Scaling { lo: 20.0, hi: 150.0 },
            Scaling { lo: 1.0, hi: 1.7 },
        ];
        m.output_scaling = Scaling { lo: 0.0, hi: 3.0 };
        m
    }

    #[test]
    fn scaling_round_trip_and_degenerate_column() {
        let s = Scaling::fit([2.0, 4.0, 3.0]);
        assert_eq!((s.forward(2.0), s.forward(4.0)), (-1.0, 1.0));
        assert_eq!(s.inverse(s.forward(3.5)), 3.5);
        let c = Scaling::fit([5.0, 5.0]);
        assert_eq!(c.forward(5.0), 0.0);
    }

    #[test]
    fn zero_weights_give_constant_output() {
        let mut m = MlpModel::zeros(Output::TMax, 4);
        m.bias_out = 0.25;
        m.output_scaling = Scaling { lo: 600.0, hi: 700.0 };
        let a = m.evaluate(&[650.0, 100.0, 50.0, 1.2]);
        let b = m.evaluate(&[700.0, 250.0, 140.0, 1.6]);
        assert_eq!(a, b);
        assert_eq!(a, 600.0 + 0.5 * 1.25 * 100.0);
    }

    #[test]
    fn analytic_jacobian_matches_central_differences() {
        for seed in 0..5 {
            let m = random_model(seed, 3 + seed as usize);
            let z = [0.3, -0.7, 0.1, 0.9];
            let mut row = vec![0.0; m.n_params()];
            m.jacobian_row(&z, &mut row);
            let p = m.params();
            let h = 1e-6;
            for k in 0..p.len() {
                let mut a = m.clone();
                let mut b = m.clone();
                let mut pa = p.clone();
                let mut pb = p.clone();
                pa[k] += h;
                pb[k] -= h;
                a.set_params(&pa);
                b.set_params(&pb);
                let fd = (a.forward_scaled(&z) - b.forward_scaled(&z)) / (2.0 * h);
                let err = (fd - row[k]).abs() / row[k].abs().max(1e-3);
                assert!(err <= 1e-5, "param {k}: fd {fd} vs analytic {}", row[k]);
            }
        }
    }

    proptest! {
        #[test]
        fn prediction_is_lipschitz(
            seed in 0u64..1000, k in 0usize..4, eps in 1e-6f64..1e-1,
            u in proptest::array::uniform4(0.0f64..1.0),
        ) {
            let m = random_model(seed, 6);
            let x: [f64; 4] = std::array::from_fn(|j| {
                let s = m.input_scaling[j];
                s.lo + u[j] * (s.hi - s.lo)
            });
            let mut y = x;
            y[k] += eps;
            let d = (m.evaluate(&y) - m.evaluate(&x)).abs();
            prop_assert!(d <= m.lipschitz_bound(k) * eps * (1.0 + 1e-9) + 1e-12);
        }
    }

    #[test]
    fn constant_target_is_fitted_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<[f64; 4]> = (0..200).map(|_| std::array::from_fn(|_| rng.gen::<f64>())).collect();
        let y = vec![0.0; 200];
        let (m, rep) = fit_mlp(Output::IUp, 4, &x[..150], &y[..150], &x[150..], &y[150..], &LmConfig::default(), 3).unwrap();
        assert!(rep.test_rmse < 1e-10, "{rep:?}");
        assert!(m.weights_out.iter().all(|w| w.abs() < 1e-6) || rep.train_rmse < 1e-12);
    }

    #[test]
    fn linear_target_is_learned() {
        // Oracle: an exact linear least-squares fit has zero residual, so the
        // network must come close to it.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<[f64; 4]> = (0..300)
            .map(|_| [rng.gen_range(600.0..750.0), rng.gen_range(40.0..300.0), rng.gen_range(20.0..150.0), rng.gen_range(1.0..1.7)])
            .collect();
        let y: Vec<f64> = x.iter().map(|v| v[0]).collect();
        let (_, rep) = fit_mlp(Output::TMax, 5, &x[..250], &y[..250], &x[250..], &y[250..], &LmConfig::default(), 4).unwrap();
        assert!(rep.test_rmse < 1e-4 * 150.0, "{rep:?}");
    }

    #[test]
    fn accepted_steps_never_increase_the_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<[f64; 4]> = (0..120).map(|_| std::array::from_fn(|_| rng.gen::<f64>())).collect();
        let y: Vec<f64> = x.iter().map(|v| (3.0 * v[0]).sin() + v[1] * v[2]).collect();
        let cfg = LmConfig { max_epochs: 60, restarts: 1, ..LmConfig::default() };
        let (_, rep) = fit_mlp(Output::IMid, 5, &x, &y, &[], &[], &cfg, 0).unwrap();
        assert!(rep.loss_history.len() > 2);
        assert!(rep.loss_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(rep.test_rmse.is_nan());
    }

    #[test]
    fn errors_for_degenerate_requests() {
        let cfg = LmConfig::default();
        assert_eq!(
            fit_mlp(Output::IUp, 3, &[], &[], &[], &[], &cfg, 0).unwrap_err(),
            SurrogateError::EmptyTraining
        );
        assert_eq!(
            fit_mlp(Output::IUp, 0, &[[0.0; 4]], &[0.0], &[], &[], &cfg, 0).unwrap_err(),
            SurrogateError::Architecture(0)
        );
    }
}
