use anyhow::Result;
use kbflow_core::linalg::frobenius;
use kbflow_core::metrics::{covariance_lipschitz_check, covariance_lipschitz_gaussian, gaussian_w2, thompson_metric};
use kbflow_core::rng::Role;
use kbflow_core::{GaussianLaw, Mat, Vector};

use super::{par_map, random_psd, uniform, Context};
use crate::record::Criterion;

const DIM: usize = 3;
const LIPSCHITZ_SAMPLES: usize = 500;

fn random_law(s: &mut kbflow_core::rng::NormalStream) -> Result<GaussianLaw> {
    let mean = Vector::from_fn(DIM, |_, _| uniform(s, -3.0, 3.0));
    Ok(GaussianLaw::new(mean, random_psd(s, DIM, 1.5, 0.05))?)
}

pub fn metrics_selftest(ctx: &mut Context) -> Result<()> {
    let n = ctx.config.replicas;
    let key = ctx.key(0, Role::Auxiliary);
    let results = par_map(n, |i| {
        let mut s = key.with_replica(i as u64).rng();
        // Snyder bound on a pair with d_T <= 1.
        let (p, q, d) = loop {
            let p = random_psd(&mut s, DIM, 1.5, 0.05);
            let l = Mat::identity(DIM, DIM) + Mat::from_fn(DIM, DIM, |_, _| uniform(&mut s, -0.25, 0.25));
            let q = &l * &p * l.transpose();
            let d = thompson_metric(&p, &q)?;
            if d <= 1.0 {
                break (p, q, d);
            }
        };
        let snyder =
            frobenius(&(&p - &q)) / (std::f64::consts::E * d * (frobenius(&p).powi(2) + frobenius(&q).powi(2)).sqrt());
        let (a, b, c) = (random_law(&mut s)?, random_law(&mut s)?, random_law(&mut s)?);
        let triangle = gaussian_w2(&a, &c)? - gaussian_w2(&a, &b)? - gaussian_w2(&b, &c)?;
        let exact = covariance_lipschitz_gaussian(&a, &b)?;
        let (sa, sb) = (a.sampler()?, b.sampler()?);
        let sampled = covariance_lipschitz_check(
            |st| sa.sample(st),
            |st| sb.sample(st),
            LIPSCHITZ_SAMPLES,
            ctx.key(i as u64, Role::Transition),
        )?;
        Ok([d, snyder, triangle, exact.margin(), sampled.margin()])
    })?;
    let names = [
        "thompson_distance",
        "snyder_ratio",
        "triangle_excess",
        "lipschitz_margin",
        "sampled_lipschitz_margin",
    ];
    let mut worst = [
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::INFINITY,
    ];
    for (i, v) in results.iter().enumerate() {
        for (name, x) in names.iter().zip(v) {
            ctx.row(0.0, i as i64, name, *x);
        }
        worst[1] = worst[1].max(v[1]);
        worst[2] = worst[2].max(v[2]);
        worst[3] = worst[3].min(v[3]);
        worst[4] = worst[4].min(v[4]);
    }
    for (name, x) in names.iter().zip(worst).skip(1) {
        ctx.aggregate(0.0, name, x);
    }
    ctx.check(Criterion::at_most("snyder_ratio", worst[1], 1.0, 0.0));
    ctx.check(Criterion::at_most("w2_triangle_excess", worst[2], 0.0, 1e-10));
    ctx.check(Criterion::at_least("lipschitz_margin", worst[3], 0.0, 0.0));
    ctx.check(Criterion::at_least("sampled_lipschitz_margin", worst[4], 0.0, 0.0));
    Ok(())
}
