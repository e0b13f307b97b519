use super::{check_shape, LdsgdVariant, StepContext, SwarmState};
use crate::error::Result;
use crate::topology::{uniform_complete_weights, MixingMatrix};
use crate::vecops;

pub(crate) fn init_inbox(swarm: &mut SwarmState, mixing: &MixingMatrix) {
    let models = swarm.models();
    for (i, agent) in swarm.agents.iter_mut().enumerate() {
        agent.stale_inbox = mixing
            .row(i)
            .iter()
            .map(|&(j, _)| (j, models[j].clone()))
            .collect();
    }
}

/// Draws `g_i^t` at every agent's current model and records it.
fn draw_all(swarm: &mut SwarmState, ctx: &StepContext<'_>) -> Result<()> {
    let t = swarm.t;
    for (i, agent) in swarm.agents.iter().enumerate() {
        swarm.drawn[i] = ctx.draw(i, &agent.x, t)?;
    }
    Ok(())
}

fn is_boundary(swarm: &SwarmState, ctx: &StepContext<'_>) -> bool {
    (swarm.t + 1).is_multiple_of(ctx.hp.tau as u64)
}

fn local_step(swarm: &mut SwarmState, alpha: f64) {
    for (agent, g) in swarm.agents.iter_mut().zip(&swarm.drawn) {
        vecops::axpy(-alpha, g, &mut agent.x);
    }
}

/// Overlapping local DSGD: local steps, then a consensus over the models
/// sent at the previous boundary minus everything computed since.
pub fn step_oldsgd(swarm: &mut SwarmState, ctx: &StepContext<'_>) -> Result<()> {
    check_shape(swarm, ctx)?;
    draw_all(swarm, ctx)?;
    let alpha = ctx.hp.alpha;
    if !is_boundary(swarm, ctx) {
        for (agent, g) in swarm.agents.iter_mut().zip(&swarm.drawn) {
            vecops::add_assign(&mut agent.grad_accum, g);
        }
        local_step(swarm, alpha);
    } else {
        let d = ctx.suite.dim();
        let mut next = Vec::with_capacity(swarm.n());
        for (i, (agent, g)) in swarm.agents.iter().zip(&swarm.drawn).enumerate() {
            let mut x = vec![0.0; d];
            ctx.mixing.mix_into(i, |j| agent.stale_inbox[&j].as_slice(), &mut x);
            let mut accum = agent.grad_accum.clone();
            vecops::add_assign(&mut accum, g);
            vecops::axpy(-alpha, &accum, &mut x);
            next.push(x);
        }
        for (agent, x) in swarm.agents.iter_mut().zip(next) {
            agent.x = x;
            agent.grad_accum.iter_mut().for_each(|v| *v = 0.0);
        }
        init_inbox(swarm, ctx.mixing);
    }
    swarm.t += 1;
    Ok(())
}

/// Adapt-then-combine consensus over `x_j - alpha g_j` (or the literal
/// `x_j - alpha g_i` reading) through `mixing`.
fn combine_adapted(
    swarm: &mut SwarmState,
    mixing: &MixingMatrix,
    alpha: f64,
    variant: LdsgdVariant,
) {
    let d = swarm.agents[0].x.len();
    let next: Vec<Vec<f64>> = match variant {
        LdsgdVariant::AdaptThenCombine => {
            let adapted: Vec<Vec<f64>> = swarm
                .agents
                .iter()
                .zip(&swarm.drawn)
                .map(|(a, g)| {
                    let mut v = a.x.clone();
                    vecops::axpy(-alpha, g, &mut v);
                    v
                })
                .collect();
            (0..swarm.n())
                .map(|i| {
                    let mut x = vec![0.0; d];
                    mixing.mix_into(i, |j| adapted[j].as_slice(), &mut x);
                    x
                })
                .collect()
        }
        LdsgdVariant::AsPrinted => (0..swarm.n())
            .map(|i| {
                let gi = &swarm.drawn[i];
                let mut x = vec![0.0; d];
                for &(j, w) in mixing.row(i) {
                    for ((o, xj), g) in x.iter_mut().zip(&swarm.agents[j].x).zip(gi) {
                        *o += w * (xj - alpha * g);
                    }
                }
                x
            })
            .collect(),
    };
    for (agent, x) in swarm.agents.iter_mut().zip(next) {
        agent.x = x;
    }
}

/// Local DSGD with fresh neighbour models at each boundary.
pub fn step_ldsgd(swarm: &mut SwarmState, ctx: &StepContext<'_>) -> Result<()> {
    check_shape(swarm, ctx)?;
    draw_all(swarm, ctx)?;
    if is_boundary(swarm, ctx) {
        combine_adapted(swarm, ctx.mixing, ctx.hp.alpha, ctx.hp.ldsgd_variant);
    } else {
        local_step(swarm, ctx.hp.alpha);
    }
    swarm.t += 1;
    Ok(())
}

/// Local SGD: the boundary is an exact average over all agents.
pub fn step_lsgd(swarm: &mut SwarmState, ctx: &StepContext<'_>) -> Result<()> {
    check_shape(swarm, ctx)?;
    draw_all(swarm, ctx)?;
    if is_boundary(swarm, ctx) {
        let exact = uniform_complete_weights(swarm.n())?;
        combine_adapted(swarm, &exact, ctx.hp.alpha, LdsgdVariant::AdaptThenCombine);
    } else {
        local_step(swarm, ctx.hp.alpha);
    }
    swarm.t += 1;
    Ok(())
}

/// Combine-then-adapt DSGD: `x_i = sum_j w_ij x_j - alpha g_i` every step.
pub fn step_dsgd_cta(swarm: &mut SwarmState, ctx: &StepContext<'_>) -> Result<()> {
    check_shape(swarm, ctx)?;
    draw_all(swarm, ctx)?;
    let d = ctx.suite.dim();
    let next: Vec<Vec<f64>> = (0..swarm.n())
        .map(|i| {
            let mut x = vec![0.0; d];
            ctx.mixing.mix_into(i, |j| swarm.agents[j].x.as_slice(), &mut x);
            vecops::axpy(-ctx.hp.alpha, &swarm.drawn[i], &mut x);
            x
        })
        .collect();
    for (agent, x) in swarm.agents.iter_mut().zip(next) {
        agent.x = x;
    }
    swarm.t += 1;
    Ok(())
}
