use rand::Rng;

use super::FrmdnModel;
use crate::data::SequenceBatch;
use crate::diffcore::Tensor;
use crate::distributions::mixture_sample;
use crate::flow::flow_inverse;
use crate::recurrent::{head_project, lstm_step, RecurrentState};
use crate::{Error, Result};

/// Feeds `x_t` (observation then action), samples the next latent from the
/// mixture and maps it back through the inverse flow.
pub fn generate_step<R: Rng + ?Sized>(
    model: &FrmdnModel,
    x_t: &[f64],
    state: &RecurrentState,
    rng: &mut R,
) -> Result<(Vec<f64>, RecurrentState)> {
    let width = model.config.d + model.config.d_action;
    if x_t.len() != width {
        return Err(Error::Dimension {
            context: "generation input",
            expected: width,
            got: x_t.len(),
        });
    }
    let (h, next) = lstm_step(&Tensor::row(x_t), state, &model.lstm)?;
    let params = head_project(h.data(), &model.head)?;
    let z = mixture_sample(&params, &model.shared, rng);
    let y = if model.flow.is_empty() {
        z
    } else {
        flow_inverse(&Tensor::row(&z), &model.flow)?.into_vec()
    };
    Ok((y, next))
}

/// Free-running rollout of `steps` samples after `y0`. `action_fn` gets the
/// current observation, the hidden state and the step index. The result
/// holds `steps + 1` rows; the action row of the final step is zero.
pub fn rollout<R, F>(model: &FrmdnModel, y0: &[f64], mut action_fn: F, steps: usize, rng: &mut R) -> Result<SequenceBatch>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64], &[f64], usize) -> Vec<f64>,
{
    let (d, da) = (model.config.d, model.config.d_action);
    if y0.len() != d {
        return Err(Error::Dimension {
            context: "rollout start",
            expected: d,
            got: y0.len(),
        });
    }
    if steps == 0 {
        return Err(Error::InvalidParameter("rollout needs at least one step".into()));
    }
    let mut state = RecurrentState::zeros(1, model.config.hidden);
    let mut y = y0.to_vec();
    let mut obs = Vec::with_capacity((steps + 1) * d);
    let mut act = Vec::with_capacity((steps + 1) * da);
    for t in 0..steps {
        let mut x = y.clone();
        if da > 0 {
            let a = action_fn(&y, state.h.data(), t);
            if a.len() != da {
                return Err(Error::Dimension {
                    context: "action",
                    expected: da,
                    got: a.len(),
                });
            }
            act.extend_from_slice(&a);
            x.extend_from_slice(&a);
        }
        obs.extend_from_slice(&y);
        let (next, s) = generate_step(model, &x, &state, rng)?;
        y = next;
        state = s;
    }
    obs.extend_from_slice(&y);
    act.extend(std::iter::repeat_n(0.0, da));
    let actions = (da > 0).then_some((da, act));
    SequenceBatch::new(1, steps + 1, d, obs, actions, "rollout")
}
