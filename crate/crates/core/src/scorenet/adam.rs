use crate::error::{Error, Result};

use super::Params;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Params,
    v: Params,
    step: u64,
}

impl AdamState {
    pub fn new(params: &Params) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradients before
/// touching anything and non-finite parameters after.
pub fn adam_step(
    params: &mut Params,
    grads: &Params,
    cfg: &AdamConfig,
    state: &mut AdamState,
) -> Result<()> {
    if let Some((name, _)) = grads
        .named()
        .into_iter()
        .find(|(_, t)| t.data.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NumericalError(format!(
            "non-finite gradient in {name}"
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let groups = params
        .named_mut()
        .into_iter()
        .zip(grads.named())
        .zip(state.m.named_mut())
        .zip(state.v.named_mut());
    for ((((_, p), (_, g)), (_, m)), (_, v)) in groups {
        for i in 0..p.data.len() {
            let gi = g.data[i] + cfg.weight_decay * p.data[i];
            m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
            v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
            let mh = m.data[i] / c1;
            let vh = v.data[i] / c2;
            p.data[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    if !params.all_finite() {
        return Err(Error::NumericalError(
            "non-finite parameter after update".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::SettingKind;
    use crate::scorenet::{ModelConfig, ScoreField};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> Params {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        ScoreField::init(ModelConfig::new(3, SettingKind::PairWise, 2, 2), &mut rng)
            .unwrap()
            .params
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = params();
        let before = p.clone();
        let g = p.zeros_like();
        let mut st = AdamState::new(&p);
        for _ in 0..5 {
            adam_step(&mut p, &g, &AdamConfig::default(), &mut st).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let mut p = params();
        let mut g = p.zeros_like();
        g.head_b1.data[0] = f64::NAN;
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &g, &AdamConfig::default(), &mut st).unwrap_err();
        assert!(matches!(err, Error::NumericalError(_)));
        assert_eq!(st.step(), 0);
    }

    #[test]
    fn scalar_quadratic_converges_monotonically() {
        // minimize (x − 3)² from x = 0 through a single-scalar slot
        let run = || {
            let mut p = params();
            p.head_b2.data[0] = 0.0;
            let mut st = AdamState::new(&p);
            let cfg = AdamConfig::with_lr(1e-2);
            let mut path = Vec::new();
            for _ in 0..100 {
                let mut g = p.zeros_like();
                g.head_b2.data[0] = 2.0 * (p.head_b2.data[0] - 3.0);
                adam_step(&mut p, &g, &cfg, &mut st).unwrap();
                path.push((p.head_b2.data[0] - 3.0).abs());
            }
            path
        };
        let a = run();
        assert_eq!(a, run());
        for w in a[5..].windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(a[99] < a[0]);
    }
}
