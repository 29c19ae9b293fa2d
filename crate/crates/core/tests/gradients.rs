//! Central-difference checks of the analytic renderer backward pass.

use lamina_core::geometry::{Detector, LaminographyGeometry};
use lamina_core::raster::{render, render_backward, RenderSettings};
use lamina_core::types::{Aabb, GaussianScene, Image};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scene(rng: &mut ChaCha8Rng) -> GaussianScene {
    let mut s = GaussianScene::empty(Aabb::centered_cube(1.0));
    for _ in 0..3 {
        let q = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        s.push_activated(
            rng.random_range(0.5..2.0),
            Vector3::new(
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
            ),
            q,
            Vector3::new(
                rng.random_range(0.04..0.12),
                rng.random_range(0.04..0.12),
                rng.random_range(0.04..0.12),
            ),
        );
    }
    s
}

fn loss(scene: &GaussianScene, geom: &LaminographyGeometry, theta: f64, st: &RenderSettings, w: &Image) -> f64 {
    let img = render(scene, &geom.view(theta), geom, st).image;
    img.data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
}

#[test]
fn backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let geom = LaminographyGeometry::new(
        0.5,
        7.0,
        14.0,
        Detector {
            nu: 40,
            nv: 40,
            pixel_size: 0.04,
        },
    )
    .unwrap();
    let st = RenderSettings {
        cutoff_sigma: 7.0,
        ..RenderSettings::default()
    };
    let mut worst: f64 = 0.0;
    for trial in 0..4 {
        let sc = scene(&mut rng);
        let theta = rng.random_range(0.0..6.28);
        let w = Image::from_fn(40, 40, |_, _| rng.random_range(-1.0..1.0));
        let grads = render_backward(&sc, &geom.view(theta), &geom, &st, &w);
        for i in 0..sc.len() {
            let mut probes: Vec<(String, f64, f64)> = Vec::new();
            let mut check = |name: &str, h: f64, analytic: f64, set: &dyn Fn(&mut GaussianScene, f64)| {
                let mut p = sc.clone();
                set(&mut p, h);
                let mut m = sc.clone();
                set(&mut m, -h);
                let fd = (loss(&p, &geom, theta, &st, &w) - loss(&m, &geom, theta, &st, &w)) / (2.0 * h);
                probes.push((name.to_string(), fd, analytic));
            };
            check("density", 1e-3, grads.raw_density[i], &|s, h| s.gaussians[i].raw_density += h);
            for k in 0..3 {
                check("position", 1e-3, grads.position[i][k], &|s, h| s.gaussians[i].position[k] += h);
                check("scale", 1e-4, grads.raw_scale[i][k], &|s, h| s.gaussians[i].raw_scale[k] += h);
            }
            for k in 0..4 {
                check("rotation", 1e-4, grads.rotation[i][k], &|s, h| s.gaussians[i].rotation[k] += h);
            }
            for (name, fd, an) in probes {
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                worst = worst.max(rel);
                println!("trial {trial} g{i} {name:9} fd {fd:+.6e} an {an:+.6e} rel {rel:.2e}");
            }
        }
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}
