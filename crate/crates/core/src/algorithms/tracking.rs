use std::collections::BTreeMap;

use super::{check_shape, Aux, StepContext, SwarmState, TrackingState};
use crate::error::Result;
use crate::vecops;

pub(crate) fn init(swarm: &mut SwarmState, ctx: &StepContext<'_>, overlapping: bool) -> Result<()> {
    let d = ctx.suite.dim();
    for (i, agent) in swarm.agents.iter_mut().enumerate() {
        let g0 = ctx.draw(i, &agent.x, 0)?;
        let mut y = g0.clone();
        y.iter_mut().for_each(|v| *v *= ctx.hp.alpha);
        agent.aux = Aux::Tracking(TrackingState {
            y,
            last_grad: g0,
            y_accum: vec![0.0; d],
            grad_diff_accum: vec![0.0; d],
            y_inbox: BTreeMap::new(),
        });
    }
    if overlapping {
        refresh_inboxes(swarm, ctx);
    }
    Ok(())
}

fn tracking_mut(aux: &mut Aux) -> &mut TrackingState {
    match aux {
        Aux::Tracking(s) => s,
        _ => unreachable!("tracking step on a swarm initialised for another algorithm"),
    }
}

fn tracking(aux: &Aux) -> &TrackingState {
    match aux {
        Aux::Tracking(s) => s,
        _ => unreachable!("tracking step on a swarm initialised for another algorithm"),
    }
}

fn refresh_inboxes(swarm: &mut SwarmState, ctx: &StepContext<'_>) {
    let xs = swarm.models();
    let ys: Vec<Vec<f64>> = swarm.agents.iter().map(|a| tracking(&a.aux).y.clone()).collect();
    for (i, agent) in swarm.agents.iter_mut().enumerate() {
        let row = ctx.mixing.row(i);
        agent.stale_inbox = row.iter().map(|&(j, _)| (j, xs[j].clone())).collect();
        tracking_mut(&mut agent.aux).y_inbox =
            row.iter().map(|&(j, _)| (j, ys[j].clone())).collect();
    }
}

fn is_boundary(swarm: &SwarmState, ctx: &StepContext<'_>) -> bool {
    swarm.t.is_multiple_of(ctx.hp.tau as u64)
}

/// Local recursion shared by both variants:
/// `x <- x - eta y`, `y <- y + alpha (g(x_new) - g(x_old))`.
fn local_step(swarm: &mut SwarmState, ctx: &StepContext<'_>) -> Result<()> {
    let (alpha, eta, t) = (ctx.hp.alpha, ctx.hp.eta, swarm.t);
    for (i, agent) in swarm.agents.iter_mut().enumerate() {
        let st = tracking_mut(&mut agent.aux);
        vecops::add_assign(&mut st.y_accum, &st.y);
        vecops::axpy(-eta, &st.y, &mut agent.x);
        let g_new = ctx.draw(i, &agent.x, t + 1)?;
        let diff = vecops::sub(&g_new, &st.last_grad);
        vecops::add_assign(&mut st.grad_diff_accum, &diff);
        vecops::axpy(alpha, &diff, &mut st.y);
        st.last_grad = g_new.clone();
        swarm.drawn[i] = g_new;
    }
    Ok(())
}

/// Finishes a boundary once `x` has been replaced: draws at the new model,
/// applies the accumulated gradient difference to the mixed `y`.
fn finish_boundary(
    swarm: &mut SwarmState,
    ctx: &StepContext<'_>,
    mixed_x: Vec<Vec<f64>>,
    mixed_y: Vec<Vec<f64>>,
) -> Result<()> {
    let t = swarm.t;
    for (i, ((agent, x), y)) in swarm.agents.iter_mut().zip(mixed_x).zip(mixed_y).enumerate() {
        agent.x = x;
        let g_new = ctx.draw(i, &agent.x, t + 1)?;
        let st = tracking_mut(&mut agent.aux);
        let diff = vecops::sub(&g_new, &st.last_grad);
        vecops::add_assign(&mut st.grad_diff_accum, &diff);
        st.y = y;
        vecops::axpy(ctx.hp.alpha, &st.grad_diff_accum, &mut st.y);
        st.last_grad = g_new.clone();
        st.y_accum.iter_mut().for_each(|v| *v = 0.0);
        st.grad_diff_accum.iter_mut().for_each(|v| *v = 0.0);
        swarm.drawn[i] = g_new;
    }
    Ok(())
}

/// Overlapping local gradient tracking. At a boundary `k` (a multiple of
/// `tau`) the models and trackers sent at the previous boundary are mixed;
/// everything accumulated locally since then is applied on top. Window
/// indices before iteration 0 are clamped to 0.
pub fn step_olgt(swarm: &mut SwarmState, ctx: &StepContext<'_>) -> Result<()> {
    check_shape(swarm, ctx)?;
    if !is_boundary(swarm, ctx) {
        local_step(swarm, ctx)?;
    } else {
        let d = ctx.suite.dim();
        let eta = ctx.hp.eta;
        let mut mixed_x = Vec::with_capacity(swarm.n());
        let mut mixed_y = Vec::with_capacity(swarm.n());
        for (i, agent) in swarm.agents.iter_mut().enumerate() {
            let st = tracking_mut(&mut agent.aux);
            vecops::add_assign(&mut st.y_accum, &st.y);
            let mut x = vec![0.0; d];
            ctx.mixing.mix_into(i, |j| agent.stale_inbox[&j].as_slice(), &mut x);
            vecops::axpy(-eta, &st.y_accum, &mut x);
            let mut y = vec![0.0; d];
            ctx.mixing.mix_into(i, |j| st.y_inbox[&j].as_slice(), &mut y);
            mixed_x.push(x);
            mixed_y.push(y);
        }
        finish_boundary(swarm, ctx, mixed_x, mixed_y)?;
        refresh_inboxes(swarm, ctx);
    }
    swarm.t += 1;
    Ok(())
}

/// Local gradient tracking with fresh neighbour state at each boundary:
/// `x_i = sum_j w_ij x_j - eta y_i`, `y_i = sum_j w_ij y_j + alpha (g_i' - g_i)`.
pub fn step_lugt(swarm: &mut SwarmState, ctx: &StepContext<'_>) -> Result<()> {
    check_shape(swarm, ctx)?;
    if !is_boundary(swarm, ctx) {
        local_step(swarm, ctx)?;
    } else {
        let d = ctx.suite.dim();
        let eta = ctx.hp.eta;
        let mut mixed_x = Vec::with_capacity(swarm.n());
        let mut mixed_y = Vec::with_capacity(swarm.n());
        for i in 0..swarm.n() {
            let mut x = vec![0.0; d];
            ctx.mixing.mix_into(i, |j| swarm.agents[j].x.as_slice(), &mut x);
            vecops::axpy(-eta, &tracking(&swarm.agents[i].aux).y, &mut x);
            let mut y = vec![0.0; d];
            ctx.mixing.mix_into(i, |j| tracking(&swarm.agents[j].aux).y.as_slice(), &mut y);
            mixed_x.push(x);
            mixed_y.push(y);
        }
        for agent in &mut swarm.agents {
            let st = tracking_mut(&mut agent.aux);
            st.grad_diff_accum.iter_mut().for_each(|v| *v = 0.0);
        }
        finish_boundary(swarm, ctx, mixed_x, mixed_y)?;
    }
    swarm.t += 1;
    Ok(())
}
