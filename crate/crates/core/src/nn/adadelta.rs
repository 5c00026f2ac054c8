use super::{ModelParams, NnError, ParamGrads};

/// AdaDelta hyperparameters.
///
/// `scale` multiplies every update before it is applied; `1.0` gives the
/// canonical method, which has no learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaDeltaConfig {
    pub rho: f64,
    pub epsilon: f64,
    pub scale: f64,
}

impl Default for AdaDeltaConfig {
    fn default() -> Self {
        Self { rho: 0.85, epsilon: 1e-6, scale: 1.0 }
    }
}

impl AdaDeltaConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(NnError::Optimizer(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(NnError::Optimizer(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(NnError::Optimizer(format!("scale must be positive, got {}", self.scale)));
        }
        Ok(())
    }
}

/// Running averages of squared gradients and squared updates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaDeltaState {
    accum_grad_sq: ParamGrads,
    accum_update_sq: ParamGrads,
    config: AdaDeltaConfig,
}

impl AdaDeltaState {
    /// Fresh state (both accumulators zero) shaped like `params`.
    pub fn new(params: &ModelParams, config: AdaDeltaConfig) -> Result<Self, NnError> {
        config.validate()?;
        Ok(Self {
            accum_grad_sq: ParamGrads::zeros_like(params),
            accum_update_sq: ParamGrads::zeros_like(params),
            config,
        })
    }

    pub fn config(&self) -> &AdaDeltaConfig {
        &self.config
    }

    pub fn accum_grad_sq(&self) -> &ParamGrads {
        &self.accum_grad_sq
    }

    pub fn accum_update_sq(&self) -> &ParamGrads {
        &self.accum_update_sq
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ParamGrads) -> Result<(), NnError> {
        if !params.same_shape_as(grads.layers())
            || !params.same_shape_as(self.accum_grad_sq.layers())
        {
            return Err(NnError::Shape("parameters, gradients and optimizer state disagree".into()));
        }
        if let Some(layer) = grads.layers().iter().position(|l| !l.values().all(|v| v.is_finite())) {
            return Err(NnError::NonFiniteGradient { layer });
        }
        let AdaDeltaConfig { rho, epsilon, scale } = self.config;
        let entries = params
            .values_mut()
            .zip(grads.values())
            .zip(self.accum_grad_sq.values_mut())
            .zip(self.accum_update_sq.values_mut());
        for (((w, &g), eg), ed) in entries {
            *eg = rho * *eg + (1.0 - rho) * g * g;
            let delta = -((*ed + epsilon).sqrt() / (*eg + epsilon).sqrt()) * g;
            *ed = rho * *ed + (1.0 - rho) * delta * delta;
            *w += scale * delta;
        }
        Ok(())
    }
}

/// Functional form of [`AdaDeltaState::step`].
pub fn adadelta_step(
    params: &ModelParams,
    grads: &ParamGrads,
    state: &AdaDeltaState,
) -> Result<(ModelParams, AdaDeltaState), NnError> {
    let mut params = params.clone();
    let mut state = state.clone();
    state.step(&mut params, grads)?;
    Ok((params, state))
}
