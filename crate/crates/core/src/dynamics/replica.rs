use super::integrator::{draw_velocities, vv_step, Bussi};
use super::latent::{advance_latent_chain, emit_features, LatentState};
use super::system::LambdaSystem;
use super::trajectory::LambdaTrajectory;
use crate::bias::Well;
use crate::config::RunConfig;
use crate::dbo::{AdjustKind, BarrierAdjustState, DboEvent, DboSettings, WellAdjustState};
use crate::error::{Error, Result};
use crate::pfc::{correct_site, DEFAULT_TOLERANCE};
use crate::rng;
use crate::units::{classify, ProtonationState};

/// Barrier used while equilibrating λ.
pub const EQUILIBRATION_BARRIER: f64 = 1.0;
/// |λ| beyond this aborts the run.
pub const DIVERGENCE_LIMIT: f64 = 10.0;

/// Which coordinate a barrier controller acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarrierTarget {
    Protonation,
    Tautomer(ProtonationState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierBlock {
    pub site: usize,
    pub target: BarrierTarget,
    pub end_time_ps: f64,
    pub fraction: f64,
    pub old: f64,
    pub new: f64,
}

#[derive(Debug, Clone)]
pub struct ReplicaOutput {
    pub trajectory: LambdaTrajectory,
    pub events: Vec<DboEvent>,
    pub barrier_blocks: Vec<BarrierBlock>,
    /// System state at the end of the run, biases included.
    pub final_system: LambdaSystem,
}

struct SiteControllers {
    well: WellAdjustState,
    barrier: BarrierAdjustState,
    tautomer: Option<[BarrierAdjustState; 2]>,
}

fn state_index(s: ProtonationState) -> usize {
    match s {
        ProtonationState::Protonated => 0,
        ProtonationState::Deprotonated => 1,
    }
}

const STATES: [ProtonationState; 2] = [ProtonationState::Protonated, ProtonationState::Deprotonated];

fn set_barriers(system: &mut LambdaSystem, heights: &[(f64, Option<[f64; 2]>)]) -> Result<()> {
    for (site, (hp, ht)) in system.sites.iter_mut().zip(heights) {
        site.bias.spline.set_barrier_height(*hp)?;
        if let (Some(t), Some(ht)) = (site.bias.tautomer.as_mut(), ht) {
            for (k, s) in STATES.iter().enumerate() {
                t.spline_mut(*s).set_barrier_height(ht[k])?;
            }
        }
    }
    Ok(())
}

fn barrier_heights(system: &LambdaSystem) -> Vec<(f64, Option<[f64; 2]>)> {
    system
        .sites
        .iter()
        .map(|s| {
            let t = s.bias.tautomer.as_ref().map(|t| [t.protonated.barrier_height, t.deprotonated.barrier_height]);
            (s.bias.spline.barrier_height, t)
        })
        .collect()
}

fn correct_all(system: &mut LambdaSystem) -> Result<()> {
    for s in &mut system.sites {
        correct_site(&mut s.bias, DEFAULT_TOLERANCE)?;
    }
    Ok(())
}

struct Stepper {
    thermostat: Bussi,
    forces: Vec<(f64, f64)>,
    latent: Vec<usize>,
    clocks: Vec<LatentState>,
    dyn_rng: rng::Rng,
    chain_rng: rng::Rng,
}

impl Stepper {
    fn step(&mut self, system: &mut LambdaSystem, config: &RunConfig, step: u64) -> Result<()> {
        vv_step(system, &self.latent, &mut self.forces, config.dt);
        self.thermostat.apply(system, config.temperature, &mut self.dyn_rng);
        let mut switched = false;
        for ((chain, clock), state) in system.env.chains.iter().zip(&mut self.clocks).zip(&mut self.latent) {
            if advance_latent_chain(chain, clock, config.dt, &mut self.chain_rng) {
                *state = clock.state;
                switched = true;
            }
        }
        if switched {
            system.total_force(&self.latent, &mut self.forces);
        }
        for s in &system.sites {
            for l in [s.lambda_p, s.lambda_t] {
                if !(l.abs() <= DIVERGENCE_LIMIT) {
                    return Err(Error::Diverged { step, lambda: l });
                }
            }
        }
        Ok(())
    }
}

/// Runs one replica at `config.ph`: PFC, low-barrier equilibration,
/// then production with optional DBO. `config.seed` is the replica seed.
pub fn run_replica(system: &LambdaSystem, config: &RunConfig, dbo: Option<&DboSettings>) -> Result<ReplicaOutput> {
    config.validate()?;
    system.validate()?;
    let mut sys = system.clone();
    for s in &mut sys.sites {
        s.set_conditions(config.ph, config.temperature);
    }
    if let Some(d) = dbo {
        let h = d.barrier.initial;
        let heights: Vec<_> = sys.sites.iter().map(|s| (h, s.has_tautomers().then_some([h, h]))).collect();
        set_barriers(&mut sys, &heights)?;
    }

    let mut dyn_rng = rng::stream(config.seed, &[0]);
    let chain_rng = rng::stream(config.seed, &[1]);
    let mut feature_rng = rng::stream(config.seed, &[2]);
    draw_velocities(&mut sys, config.temperature, &mut dyn_rng);
    let mut st = Stepper {
        thermostat: Bussi::new(sys.n_dof(), config.temperature, config.dt, config.thermostat_tau),
        forces: vec![(0.0, 0.0); sys.sites.len()],
        latent: sys.env.chains.iter().map(|c| c.initial_state).collect(),
        clocks: Vec::new(),
        dyn_rng,
        chain_rng,
    };
    st.clocks = sys.env.chains.iter().map(|c| LatentState::start(c, &mut st.chain_rng)).collect();

    let eq_steps = (config.equilibration_ps / config.dt).round() as u64;
    if eq_steps > 0 {
        let production = barrier_heights(&sys);
        let low: Vec<_> =
            production.iter().map(|(_, t)| (EQUILIBRATION_BARRIER, t.map(|_| [EQUILIBRATION_BARRIER; 2]))).collect();
        set_barriers(&mut sys, &low)?;
        correct_all(&mut sys)?;
        sys.total_force(&st.latent, &mut st.forces);
        for step in 0..eq_steps {
            st.step(&mut sys, config, step)?;
        }
        set_barriers(&mut sys, &production)?;
    }
    correct_all(&mut sys)?;
    sys.total_force(&st.latent, &mut st.forces);

    let ids = sys.sites.iter().map(|s| s.id.clone()).collect();
    let mut traj = LambdaTrajectory::new(ids);
    let mut events = Vec::new();
    let mut blocks = Vec::new();
    let frame_ps = config.frame_interval_ps();
    let mut controllers: Vec<SiteControllers> = match dbo {
        Some(d) => sys
            .sites
            .iter()
            .map(|s| SiteControllers {
                well: WellAdjustState::new(d.well),
                barrier: BarrierAdjustState::new(d.barrier, s.bias.spline.barrier_height),
                tautomer: s.bias.tautomer.as_ref().map(|t| {
                    [
                        BarrierAdjustState::new(d.barrier, t.protonated.barrier_height),
                        BarrierAdjustState::new(d.barrier, t.deprotonated.barrier_height),
                    ]
                }),
            })
            .collect(),
        None => Vec::new(),
    };
    let frames_per = |ps: f64| ((ps / frame_ps).round() as usize).max(1);
    let (well_block, barrier_block, censor_steps) = match dbo {
        Some(d) => (frames_per(d.well.block_ps), frames_per(d.barrier.block_ps), (d.censor_ps / config.dt).round() as u64),
        None => (usize::MAX, usize::MAX, 0),
    };
    let mut censor_until = vec![0u64; sys.sites.len()];

    let n_frames = config.n_steps / config.output_stride;
    for frame in 1..=n_frames {
        for k in 0..config.output_stride {
            let step = (frame - 1) * config.output_stride + k;
            st.step(&mut sys, config, eq_steps + step)?;
        }
        let step = frame * config.output_stride;
        let time = step as f64 * config.dt;
        traj.steps.push(step);
        traj.times.push(time);
        for (i, s) in sys.sites.iter().enumerate() {
            traj.lambda_p[i].push(s.lambda_p);
            traj.lambda_t[i].push(if s.has_tautomers() { s.lambda_t } else { 0.0 });
            traj.censored[i].push(step < censor_until[i]);
        }
        if !sys.env.chains.is_empty() {
            let mut f = Vec::with_capacity(sys.feature_dim());
            for (chain, &state) in sys.env.chains.iter().zip(&st.latent) {
                emit_features(chain, state, &mut feature_rng, &mut f);
            }
            traj.features.push(f);
        }
        let Some(settings) = dbo else { continue };

        let nf = frame as usize;
        let mut changed = false;
        for (i, c) in controllers.iter_mut().enumerate() {
            let site = &mut sys.sites[i];
            let (lp, lt) = (site.lambda_p, site.lambda_t);
            c.well.record(lp);
            c.barrier.record(lp);
            if let Some(t) = c.tautomer.as_mut() {
                t[state_index(classify(lp))].record(lt);
            }
            let mut adjusted = false;
            if nf % well_block == 0 {
                if let Some((well, shift)) = c.well.close_block() {
                    let old = site.bias.spline.center(well);
                    site.bias.spline.set_center(well, old + shift)?;
                    events.push(DboEvent { time_ps: time, site: site.id.clone(), kind: AdjustKind::Well, old, new: old + shift });
                    adjusted = true;
                }
            }
            if nf % barrier_block == 0 {
                if let Some((fraction, old, new)) = c.barrier.close_block(1) {
                    blocks.push(BarrierBlock { site: i, target: BarrierTarget::Protonation, end_time_ps: time, fraction, old, new });
                    if new != old {
                        site.bias.spline.set_barrier_height(new)?;
                        events.push(DboEvent { time_ps: time, site: site.id.clone(), kind: AdjustKind::Barrier, old, new });
                        adjusted = true;
                    }
                }
                if let (Some(t), Some(bias)) = (c.tautomer.as_mut(), site.bias.tautomer.as_mut()) {
                    for (k, state) in STATES.iter().enumerate() {
                        let Some((fraction, old, new)) = t[k].close_block(settings.min_state_frames) else { continue };
                        let target = BarrierTarget::Tautomer(*state);
                        blocks.push(BarrierBlock { site: i, target, end_time_ps: time, fraction, old, new });
                        if new != old {
                            bias.spline_mut(*state).set_barrier_height(new)?;
                            let label = match state {
                                ProtonationState::Protonated => "protonated",
                                ProtonationState::Deprotonated => "deprotonated",
                            };
                            events.push(DboEvent {
                                time_ps: time,
                                site: format!("{}/t:{label}", site.id),
                                kind: AdjustKind::Barrier,
                                old,
                                new,
                            });
                            adjusted = true;
                        }
                    }
                }
            }
            if adjusted {
                correct_site(&mut site.bias, DEFAULT_TOLERANCE)?;
                // the window [t, t + censor) starts with the current frame
                censor_until[i] = step + censor_steps;
                *traj.censored[i].last_mut().expect("frame just pushed") = true;
                changed = true;
            }
        }
        if changed {
            sys.total_force(&st.latent, &mut st.forces);
        }
    }
    Ok(ReplicaOutput { trajectory: traj, events, barrier_blocks: blocks, final_system: sys })
}

/// Well centre shift helper for callers inspecting final biases.
pub fn well_offsets(system: &LambdaSystem, site: usize) -> (f64, f64) {
    let s = &system.sites[site].bias.spline;
    (s.center(Well::Protonated), s.center(Well::Deprotonated) - 1.0)
}
