use super::{check_shape, Aux, DiffusionState, StepContext, SwarmState};
use crate::error::Result;
use crate::vecops;

/// `y_i^0 = x_i^0 - sum_j w_ij x_j^0`; the first gradient is drawn at `x_i^0`.
pub(crate) fn init(swarm: &mut SwarmState, ctx: &StepContext<'_>, overlapping: bool) -> Result<()> {
    let d = ctx.suite.dim();
    let xs = swarm.models();
    for (i, agent) in swarm.agents.iter_mut().enumerate() {
        let mut mixed = vec![0.0; d];
        ctx.mixing.mix_into(i, |j| xs[j].as_slice(), &mut mixed);
        let y = vecops::sub(&agent.x, &mixed);
        let g0 = ctx.draw(i, &agent.x, 0)?;
        if overlapping {
            agent.stale_inbox = ctx
                .mixing
                .row(i)
                .iter()
                .map(|&(j, _)| (j, xs[j].clone()))
                .collect();
        }
        agent.aux = Aux::Diffusion(DiffusionState {
            y,
            round_start: agent.x.clone(),
            round_start_grad: g0.clone(),
            last_grad: g0,
        });
    }
    Ok(())
}

fn diffusion_mut(aux: &mut Aux) -> &mut DiffusionState {
    match aux {
        Aux::Diffusion(s) => s,
        _ => unreachable!("diffusion step on a swarm initialised for another algorithm"),
    }
}

fn step_diffusion(swarm: &mut SwarmState, ctx: &StepContext<'_>, overlapping: bool) -> Result<()> {
    check_shape(swarm, ctx)?;
    let (alpha, beta, t) = (ctx.hp.alpha, ctx.hp.beta(), swarm.t);

    // Inner step: phi <- phi - alpha g(phi) - beta y.
    for agent in &mut swarm.agents {
        let st = diffusion_mut(&mut agent.aux);
        vecops::axpy(-alpha, &st.last_grad, &mut agent.x);
        vecops::axpy(-beta, &st.y, &mut agent.x);
    }

    let round_end = (t + 1) % ctx.hp.tau as u64 == 0;
    if round_end {
        let d = ctx.suite.dim();
        let next: Vec<Vec<f64>> = (0..swarm.n())
            .map(|i| {
                let mut x = vec![0.0; d];
                if overlapping {
                    let agent = &swarm.agents[i];
                    ctx.mixing.mix_into(i, |j| agent.stale_inbox[&j].as_slice(), &mut x);
                    let start = match &agent.aux {
                        Aux::Diffusion(st) => &st.round_start,
                        _ => unreachable!(),
                    };
                    vecops::add_assign(&mut x, &agent.x);
                    vecops::axpy(-1.0, start, &mut x);
                } else {
                    ctx.mixing.mix_into(i, |j| swarm.agents[j].x.as_slice(), &mut x);
                }
                x
            })
            .collect();
        for (i, (agent, x)) in swarm.agents.iter_mut().zip(next).enumerate() {
            agent.x = x;
            let g_new = ctx.draw(i, &agent.x, t + 1)?;
            let st = diffusion_mut(&mut agent.aux);
            vecops::add_assign(&mut st.y, &g_new);
            vecops::axpy(-1.0, &st.round_start_grad, &mut st.y);
            st.round_start = agent.x.clone();
            st.round_start_grad = g_new.clone();
            st.last_grad = g_new.clone();
            swarm.drawn[i] = g_new;
        }
        if overlapping {
            let xs = swarm.models();
            for (i, agent) in swarm.agents.iter_mut().enumerate() {
                agent.stale_inbox = ctx
                    .mixing
                    .row(i)
                    .iter()
                    .map(|&(j, _)| (j, xs[j].clone()))
                    .collect();
            }
        }
    } else {
        for (i, agent) in swarm.agents.iter_mut().enumerate() {
            let g_new = ctx.draw(i, &agent.x, t + 1)?;
            diffusion_mut(&mut agent.aux).last_grad = g_new.clone();
            swarm.drawn[i] = g_new;
        }
    }
    swarm.t += 1;
    Ok(())
}

/// Overlapping local exact diffusion: the round-end consensus mixes the
/// models every agent started the round from, plus its own local progress.
pub fn step_oled(swarm: &mut SwarmState, ctx: &StepContext<'_>) -> Result<()> {
    step_diffusion(swarm, ctx, true)
}

/// Local exact diffusion: the round-end consensus mixes the post-local-step
/// models.
pub fn step_led(swarm: &mut SwarmState, ctx: &StepContext<'_>) -> Result<()> {
    step_diffusion(swarm, ctx, false)
}
