use super::system::LambdaSystem;
use crate::rng::Rng;
use crate::units::kt;
use rand_distr::{Distribution, StandardNormal};

/// One velocity Verlet step. `forces` must hold the forces at the current
/// positions on entry and holds the new ones on return.
pub fn vv_step(system: &mut LambdaSystem, latent: &[usize], forces: &mut [(f64, f64)], dt: f64) {
    let half = 0.5 * dt;
    for (s, f) in system.sites.iter_mut().zip(forces.iter()) {
        s.vel_p += half * f.0 / s.mass;
        s.lambda_p += dt * s.vel_p;
        if s.bias.tautomer.is_some() {
            s.vel_t += half * f.1 / s.mass;
            s.lambda_t += dt * s.vel_t;
        }
    }
    system.total_force(latent, forces);
    for (s, f) in system.sites.iter_mut().zip(forces.iter()) {
        s.vel_p += half * f.0 / s.mass;
        if s.bias.tautomer.is_some() {
            s.vel_t += half * f.1 / s.mass;
        }
    }
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Stochastic velocity rescaling with the constants of one run precomputed.
#[derive(Debug, Clone, Copy)]
pub struct Bussi {
    ndof: usize,
    c: f64,
    /// (1 − c)·target/ndof
    noise: f64,
}

impl Bussi {
    pub fn new(ndof: usize, temperature: f64, dt: f64, tau: f64) -> Self {
        let target = 0.5 * ndof as f64 * kt(temperature);
        let c = if tau.is_infinite() {
            1.0
        } else if tau > 0.0 {
            (-dt / tau).exp()
        } else {
            0.0
        };
        Self { ndof, c, noise: (1.0 - c) * target / ndof.max(1) as f64 }
    }

    /// Factor that rescales velocities with kinetic energy `kinetic`.
    pub fn factor(&self, kinetic: f64, rng: &mut Rng) -> f64 {
        if self.ndof == 0 || self.c == 1.0 {
            return 1.0;
        }
        let r1 = normal(rng);
        if self.ndof == 1 {
            // K' = (√(cK) + R·√((1−c)K̄))², and the sign rule reduces to α itself
            return self.c.sqrt() + r1 * (self.noise / kinetic).sqrt();
        }
        let rest: f64 = (1..self.ndof).map(|_| normal(rng).powi(2)).sum();
        let c = self.c;
        let k_new = c * kinetic + self.noise * (r1 * r1 + rest) + 2.0 * r1 * (c * self.noise * kinetic).sqrt();
        let alpha = (k_new / kinetic).max(0.0).sqrt();
        // keep the velocity direction consistent with the sampled Wiener increment
        if r1 + (c * kinetic / self.noise).sqrt() < 0.0 {
            -alpha
        } else {
            alpha
        }
    }

    /// Applies one thermostat step to every dynamic coordinate.
    pub fn apply(&self, system: &mut LambdaSystem, temperature: f64, rng: &mut Rng) {
        let kinetic = system.kinetic_energy();
        if !(kinetic > 0.0) {
            draw_velocities(system, temperature, rng);
            return;
        }
        let alpha = self.factor(kinetic, rng);
        if alpha == 1.0 {
            return;
        }
        for s in &mut system.sites {
            s.vel_p *= alpha;
            if s.bias.tautomer.is_some() {
                s.vel_t *= alpha;
            }
        }
    }
}

/// Stochastic velocity rescaling factor for kinetic energy `kinetic` of
/// `ndof` degrees of freedom at `temperature`.
pub fn bussi_factor(kinetic: f64, temperature: f64, ndof: usize, dt: f64, tau: f64, rng: &mut Rng) -> f64 {
    Bussi::new(ndof, temperature, dt, tau).factor(kinetic, rng)
}

/// Global Bussi thermostat over all dynamic λ coordinates.
pub fn thermostat_step(system: &mut LambdaSystem, dt: f64, tau: f64, temperature: f64, rng: &mut Rng) {
    Bussi::new(system.n_dof(), temperature, dt, tau).apply(system, temperature, rng);
}

/// Maxwell-Boltzmann velocities for every dynamic coordinate.
pub fn draw_velocities(system: &mut LambdaSystem, temperature: f64, rng: &mut Rng) {
    let kt = kt(temperature);
    for s in &mut system.sites {
        let sd = (kt / s.mass).sqrt();
        s.vel_p = sd * normal(rng);
        s.vel_t = if s.bias.tautomer.is_some() { sd * normal(rng) } else { 0.0 };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bias::CalibrationPolynomial;
    use crate::dynamics::system::LambdaSite;
    use crate::rng;

    /// Site with every bias term switched off.
    fn free_site() -> LambdaSite {
        let mut s = LambdaSite::new("x", 4.0);
        s.bias.spline.set_barrier_height(0.0).unwrap();
        s.bias.spline.wall_stiffness = 0.0;
        s
    }

    fn harmonic(k: f64) -> LambdaSystem {
        let mut s = free_site();
        // ½k(λ − 0.5)² up to a constant
        s.reference = Some(CalibrationPolynomial::new(2, 0, vec![0.0, -0.5 * k, 0.5 * k]).unwrap());
        s.lambda_p = 0.7;
        s.vel_p = 0.1;
        LambdaSystem::new(vec![s])
    }

    #[test]
    fn free_drift() {
        let mut sys = LambdaSystem::new(vec![free_site()]);
        sys.sites[0].lambda_p = 0.3;
        sys.sites[0].vel_p = 1.0;
        let mut f = vec![(0.0, 0.0)];
        vv_step(&mut sys, &[], &mut f, 0.002);
        assert!((sys.sites[0].lambda_p - 0.302).abs() < 1e-15);
    }

    #[test]
    fn harmonic_energy_is_conserved() {
        let mut sys = harmonic(200.0);
        let mut f = vec![(0.0, 0.0)];
        sys.total_force(&[], &mut f);
        let e0 = sys.potential_energy(&[]) + sys.kinetic_energy();
        let mut max_dev: f64 = 0.0;
        for _ in 0..100_000 {
            vv_step(&mut sys, &[], &mut f, 0.002);
            let e = sys.potential_energy(&[]) + sys.kinetic_energy();
            max_dev = max_dev.max((e - e0).abs());
        }
        assert!(max_dev < 1e-3 * kt(300.0), "{max_dev}");
    }

    #[test]
    fn time_reversible() {
        let mut sys = harmonic(200.0);
        sys.sites.push(LambdaSite::tautomeric("h", 6.5, 6.9));
        sys.sites[1].lambda_p = 0.2;
        sys.sites[1].lambda_t = 0.6;
        sys.sites[1].vel_t = -0.3;
        sys.env = crate::dynamics::system::EnvironmentModel::uncoupled(2);
        sys.env.set_coupling(0, 1, 3.0);
        let start: Vec<(f64, f64)> = sys.sites.iter().map(|s| (s.lambda_p, s.lambda_t)).collect();
        let mut f = vec![(0.0, 0.0); 2];
        sys.total_force(&[], &mut f);
        for _ in 0..5000 {
            vv_step(&mut sys, &[], &mut f, 0.002);
        }
        for s in &mut sys.sites {
            s.vel_p = -s.vel_p;
            s.vel_t = -s.vel_t;
        }
        for _ in 0..5000 {
            vv_step(&mut sys, &[], &mut f, 0.002);
        }
        for (s, (p, t)) in sys.sites.iter().zip(start) {
            assert!((s.lambda_p - p).abs() < 1e-8 && (s.lambda_t - t).abs() < 1e-8);
        }
    }

    #[test]
    fn equipartition_under_thermostat() {
        // several oscillators so the kinetic average is not dominated by
        // the slow fluctuations of a single degree of freedom
        let mut sites: Vec<LambdaSite> = (0..60)
            .map(|i| {
                let k = 20.0 + 3.0 * i as f64;
                let mut s = free_site();
                s.reference = Some(CalibrationPolynomial::new(2, 0, vec![0.0, -0.5 * k, 0.5 * k]).unwrap());
                s.lambda_p = 0.5;
                s
            })
            .collect();
        sites.push(LambdaSite::tautomeric("h", 6.5, 6.9));
        let mut sys = LambdaSystem::new(sites);
        let mut f = vec![(0.0, 0.0); sys.sites.len()];
        sys.total_force(&[], &mut f);
        let mut r = rng::stream(7, &[]);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            vv_step(&mut sys, &[], &mut f, 0.002);
            thermostat_step(&mut sys, 0.002, 1.0, 300.0, &mut r);
            sum += sys.kinetic_energy();
        }
        let per_dof = sum / n as f64 / sys.n_dof() as f64;
        assert!((per_dof / (0.5 * kt(300.0)) - 1.0).abs() < 0.02, "{per_dof}");
    }

    #[test]
    fn infinite_tau_leaves_velocities() {
        let mut sys = harmonic(10.0);
        let mut r = rng::stream(1, &[]);
        thermostat_step(&mut sys, 0.002, f64::INFINITY, 300.0, &mut r);
        assert_eq!(sys.sites[0].vel_p, 0.1);
    }

    #[test]
    fn thermostat_is_deterministic() {
        let run = || {
            let mut sys = harmonic(10.0);
            let mut r = rng::stream(99, &[3]);
            (0..100)
                .map(|_| {
                    thermostat_step(&mut sys, 0.002, 1.0, 300.0, &mut r);
                    sys.sites[0].vel_p
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
