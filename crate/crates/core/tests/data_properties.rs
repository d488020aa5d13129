use metareg::data::{gen_texture, make_pair, DomainSpec, TextureKind};
use metareg::ImageGrid;

fn window_variance_coverage(img: &ImageGrid<f64>, n: usize) -> f64 {
    let (h, w) = img.dims();
    let mut ok = 0;
    let mut total = 0;
    for y in 0..=h - n {
        for x in 0..=w - n {
            let vals: Vec<f64> = (0..n * n).map(|i| img.get(y + i / n, x + i % n)).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            total += 1;
            if var >= 1e-3 {
                ok += 1;
            }
        }
    }
    ok as f64 / total as f64
}

fn histogram(img: &ImageGrid<f64>) -> [f64; 16] {
    let mut h = [0.0; 16];
    for &v in img.data() {
        h[((v * 16.0) as usize).min(15)] += 1.0;
    }
    let n = img.len() as f64;
    h.map(|c| c / n)
}

fn chi2(a: &[f64; 16], b: &[f64; 16]) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(x, y)| *x + *y > 0.0)
        .map(|(x, y)| (x - y).powi(2) / (x + y))
        .sum::<f64>()
        * 0.5
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

#[test]
fn textures_stay_in_unit_range() {
    for kind in TextureKind::ALL {
        let spec = DomainSpec::new(kind);
        for seed in 0..100 {
            let img: ImageGrid<f64> = gen_texture(&spec, seed).unwrap();
            let (lo, hi) = img.min_max();
            assert!(lo >= 0.0 && hi <= 1.0, "{kind} seed {seed}: [{lo}, {hi}]");
        }
    }
}

#[test]
fn textures_carry_local_variance() {
    for kind in TextureKind::ALL {
        let spec = DomainSpec::new(kind);
        let cover: Vec<f64> = (0..20)
            .map(|s| window_variance_coverage(&gen_texture(&spec, s).unwrap(), 9))
            .collect();
        let mean = cover.iter().sum::<f64>() / cover.len() as f64;
        eprintln!("{kind}: mean coverage {mean:.3}, min {:.3}", cover.iter().cloned().fold(1.0, f64::min));
        assert!(mean >= 0.9, "{kind}: {cover:?}");
    }
}

#[test]
fn texture_families_are_distinguishable() {
    let hists: Vec<Vec<[f64; 16]>> = TextureKind::ALL
        .iter()
        .map(|&k| {
            let spec = DomainSpec::new(k);
            (0..50).map(|s| histogram(&gen_texture(&spec, s).unwrap())).collect()
        })
        .collect();
    for (i, a) in hists.iter().enumerate() {
        let within = median((0..50).map(|s| chi2(&a[s], &a[(s + 1) % 50])).collect());
        for (j, b) in hists.iter().enumerate() {
            if i == j {
                continue;
            }
            let between = median((0..50).map(|s| chi2(&a[s], &b[s])).collect());
            eprintln!("{:?} vs {:?}: within {within:.4} between {between:.4}", TextureKind::ALL[i], TextureKind::ALL[j]);
            assert!(between > within);
        }
    }
}

#[test]
fn undeformed_distance_scales_with_amplitude() {
    let spec = DomainSpec::new(TextureKind::Curves);
    let ratios: Vec<f64> = (0..100)
        .map(|s| make_pair::<f64>(&spec, s, 25).unwrap().landmarks.unwrap().mean_raw_distance() / spec.warp_amplitude)
        .collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    eprintln!("mean ratio {mean:.3}");
    assert!((0.3..=1.0).contains(&mean), "{mean}");
}
