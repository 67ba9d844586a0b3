use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::FusionNet;
use super::tape::Mat;
use crate::dataprep::InputSequence;
use crate::error::{Error, Result};
use crate::linalg::State;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Steps without a new best smoothed loss before the rate is reduced.
    pub plateau_patience: usize,
    /// Span in steps of the moving average of batch losses watched by the
    /// plateau schedule, which starts once the average covers a full span;
    /// 0 or 1 watches the raw batch loss from the first step.
    pub loss_smoothing: usize,
    /// Multiplier applied on a plateau (0.75; 0.25 for the alternative reading).
    pub plateau_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 50_000,
            batch_size: 32,
            learning_rate: 5e-5,
            plateau_patience: 50_000,
            loss_smoothing: 1000,
            plateau_factor: 0.75,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.plateau_patience == 0 {
            return Err(Error::Config("batch_size and plateau_patience must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return Err(Error::Config(
                "learning_rate must be >= 0 and plateau_factor in (0, 1]".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Config("invalid Adam moments".into()));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config("grad_clip must be >= 0".into()));
        }
        Ok(())
    }
}

/// One record in normalised coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub seq: InputSequence,
    pub truth: Vec<State>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Reduce-on-plateau learning-rate schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Plateau {
    pub patience: usize,
    pub factor: f64,
    pub best: Option<f64>,
    pub stale: usize,
}

impl Plateau {
    pub fn new(patience: usize, factor: f64) -> Self {
        Plateau {
            patience,
            factor,
            best: None,
            stale: 0,
        }
    }

    /// Feed one loss; returns the multiplier to apply to the rate.
    pub fn observe(&mut self, loss: f64) -> f64 {
        match self.best {
            Some(b) if loss >= b => {
                self.stale += 1;
                if self.stale >= self.patience {
                    self.stale = 0;
                    return self.factor;
                }
            }
            _ => {
                self.best = Some(loss);
                self.stale = 0;
            }
        }
        1.0
    }
}

/// Running mean of the first `span` losses, exponential moving average with
/// that span afterwards. `count` is the number of losses including `loss`.
pub fn smooth(previous: Option<f64>, loss: f64, span: usize, count: usize) -> f64 {
    let alpha = (2.0 / (span.max(1) as f64 + 1.0)).max(1.0 / count.max(1) as f64);
    match previous {
        Some(s) => s + alpha * (loss - s),
        None => loss,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
    pub t: u64,
}

impl Adam {
    pub fn new(shapes: &[Mat]) -> Self {
        Adam {
            m: shapes.iter().map(|p| Mat::zeros(p.raw_dim())).collect(),
            v: shapes.iter().map(|p| Mat::zeros(p.raw_dim())).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Mat], grads: &[Mat], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            m.zip_mut_with(g, |m, &g| *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g);
            v.zip_mut_with(g, |v, &g| *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g);
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= lr * (m / bc1) / ((v / bc2).sqrt() + cfg.epsilon);
            });
        }
    }
}

/// Single optimisation stream over a fixed set of samples.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub net: FusionNet,
    pub cfg: TrainConfig,
    pub adam: Adam,
    pub plateau: Plateau,
    /// Moving average of batch losses fed to the plateau schedule.
    pub smoothed_loss: Option<f64>,
    pub lr: f64,
    pub step: usize,
    pub rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(net: FusionNet, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Trainer {
            adam: Adam::new(net.params.values()),
            plateau: Plateau::new(cfg.plateau_patience, cfg.plateau_factor),
            smoothed_loss: None,
            lr: cfg.learning_rate,
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            net,
            cfg,
        })
    }

    /// Mean loss of the current parameters over `data`, skipping empty
    /// sequences.
    pub fn mean_loss(&self, data: &[TrainSample]) -> Result<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for s in data.iter().filter(|s| !s.seq.is_empty()) {
            let mut fwd = self.net.forward(&s.seq, None)?;
            let l = self.net.loss(&mut fwd, &s.truth);
            sum += fwd.tape.value(l)[(0, 0)];
            n += 1;
        }
        Ok(if n == 0 { 0.0 } else { sum / n as f64 })
    }

    /// One gradient step on a random batch; returns the batch mean loss.
    pub fn train_step(&mut self, data: &[TrainSample]) -> Result<LossPoint> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        self.step += 1;
        let mut grads: Vec<Mat> = self
            .net
            .params
            .values()
            .iter()
            .map(|p| Mat::zeros(p.raw_dim()))
            .collect();
        let mut loss = 0.0;
        let mut used = 0usize;
        for _ in 0..self.cfg.batch_size {
            let sample = &data[self.rng.random_range(0..data.len())];
            if sample.seq.is_empty() {
                continue;
            }
            let dropout_rng = (self.net.cfg.dropout > 0.0).then_some(&mut self.rng);
            let (l, g) = self.net.loss_and_grad(&sample.seq, &sample.truth, dropout_rng)?;
            loss += l;
            for (acc, gi) in grads.iter_mut().zip(&g) {
                *acc += gi;
            }
            used += 1;
        }
        let lr = self.lr;
        if used == 0 {
            return Ok(LossPoint {
                step: self.step,
                loss: 0.0,
                lr,
            });
        }
        loss /= used as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { step: self.step, loss });
        }
        let inv = 1.0 / used as f64;
        let mut norm2 = 0.0;
        for g in &mut grads {
            *g *= inv;
            norm2 += g.iter().map(|v| v * v).sum::<f64>();
        }
        let norm = norm2.sqrt();
        if !norm.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                loss: norm,
            });
        }
        if self.cfg.grad_clip > 0.0 && norm > self.cfg.grad_clip {
            let k = self.cfg.grad_clip / norm;
            for g in &mut grads {
                *g *= k;
            }
        }
        self.adam.step(self.net.params.values_mut(), &grads, lr, &self.cfg);
        let smoothed = smooth(self.smoothed_loss, loss, self.cfg.loss_smoothing, self.step);
        self.smoothed_loss = Some(smoothed);
        if self.step >= self.cfg.loss_smoothing {
            self.lr *= self.plateau.observe(smoothed);
        }
        Ok(LossPoint {
            step: self.step,
            loss,
            lr,
        })
    }

    /// Run until `cfg.steps` total steps, reporting each point to `on_step`.
    pub fn run(
        &mut self,
        data: &[TrainSample],
        mut on_step: impl FnMut(&Trainer, &LossPoint) -> Result<()>,
    ) -> Result<Vec<LossPoint>> {
        let mut curve = Vec::with_capacity(self.cfg.steps.saturating_sub(self.step));
        while self.step < self.cfg.steps {
            let p = self.train_step(data)?;
            on_step(self, &p)?;
            curve.push(p);
        }
        Ok(curve)
    }
}

/// Train a fresh copy of `net` and return it with its loss curve.
pub fn train(net: FusionNet, data: &[TrainSample], cfg: TrainConfig) -> Result<(FusionNet, Vec<LossPoint>)> {
    if data.iter().all(|s| s.seq.is_empty()) {
        return Err(Error::InvalidArgument("training set has no nonempty sequence".into()));
    }
    let mut trainer = Trainer::new(net, cfg)?;
    let curve = trainer.run(data, |_, _| Ok(()))?;
    Ok((trainer.net, curve))
}
