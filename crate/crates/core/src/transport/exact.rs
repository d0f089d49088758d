use super::{DiscreteMass, TransportValue};

fn sorted_order(atoms: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..atoms.len()).collect();
    idx.sort_by(|&i, &j| atoms[i].total_cmp(&atoms[j]));
    idx
}

/// Exact optimal transport cost `∫_0^1 |F_a⁻¹(q) - F_b⁻¹(q)|^p dq`.
///
/// The two quantile functions are step functions; walking their merged
/// breakpoints visits each pair `(i, j)` of co-located quantile pieces once,
/// contributing `Δq · |x_i - y_j|^p`. The same walk yields the position
/// gradients.
pub fn wasserstein_1d(a: &DiscreteMass, b: &DiscreteMass, p: f64) -> TransportValue {
    let (xa, ma) = (a.atoms(), a.mass());
    let (xb, mb) = (b.atoms(), b.mass());
    let oa = sorted_order(xa);
    let ob = sorted_order(xb);
    let mut grad_a = vec![0.0; xa.len()];
    let mut grad_b = vec![0.0; xb.len()];
    let mut value = 0.0;

    let (mut i, mut j) = (0, 0);
    let mut ra = ma[oa[0]];
    let mut rb = mb[ob[0]];
    loop {
        let (ia, jb) = (oa[i], ob[j]);
        let step = ra.min(rb);
        let d = xa[ia] - xb[jb];
        let ad = d.abs();
        if step > 0.0 {
            if p == 1.0 {
                value += step * ad;
                let s = step * d.signum() * (ad > 0.0) as u8 as f64;
                grad_a[ia] += s;
                grad_b[jb] -= s;
            } else {
                value += step * ad.powf(p);
                let s = step * p * ad.powf(p - 1.0) * d.signum();
                grad_a[ia] += s;
                grad_b[jb] -= s;
            }
        }
        if ra <= rb {
            rb -= ra;
            i += 1;
            if i == oa.len() {
                break;
            }
            ra = ma[oa[i]];
        } else {
            ra -= rb;
            j += 1;
            if j == ob.len() {
                break;
            }
            rb = mb[ob[j]];
        }
    }
    TransportValue {
        value,
        grad_a,
        grad_b,
    }
}

/// Wasserstein-1 (Earth Mover's) distance with ground cost `|x - y|`.
pub fn emd_1d_exact(a: &DiscreteMass, b: &DiscreteMass) -> f64 {
    wasserstein_1d(a, b, 1.0).value
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn u(atoms: &[f64]) -> DiscreteMass {
        DiscreteMass::uniform(atoms.to_vec()).unwrap()
    }

    /// Independent route: integrate |F_a(x) - F_b(x)| over the merged support.
    fn cdf_integral(a: &DiscreteMass, b: &DiscreteMass) -> f64 {
        let mut xs: Vec<f64> = a.atoms().iter().chain(b.atoms()).copied().collect();
        xs.sort_by(f64::total_cmp);
        let cdf = |m: &DiscreteMass, x: f64| -> f64 {
            m.atoms().iter().zip(m.mass()).filter(|(a, _)| **a <= x).map(|(_, w)| w).sum()
        };
        xs.windows(2).map(|w| (cdf(a, w[0]) - cdf(b, w[0])).abs() * (w[1] - w[0])).sum()
    }

    #[test]
    fn examples() {
        assert!((emd_1d_exact(&u(&[1.0, 3.0]), &u(&[2.0])) - 1.0).abs() < 1e-12);
        assert!((emd_1d_exact(&u(&[0.0, 2.0]), &u(&[1.0, 3.0])) - 1.0).abs() < 1e-12);
        let a = DiscreteMass::new(vec![0.3, -1.0, 2.0], vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(emd_1d_exact(&a, &a), 0.0);
    }

    #[test]
    fn point_mass_gradient_is_mean_sign() {
        let v = wasserstein_1d(&u(&[1.0, 3.0, 4.0, 0.5]), &u(&[2.0]), 1.0);
        assert_eq!(v.grad_a, vec![-0.25, 0.25, 0.25, -0.25]);
        assert_eq!(v.grad_b, vec![0.0]);
    }

    proptest! {
        #[test]
        fn agrees_with_cdf_integral(
            a in proptest::collection::vec((-5.0f64..5.0, 0.01f64..1.0), 1..20),
            b in proptest::collection::vec((-5.0f64..5.0, 0.01f64..1.0), 1..20),
        ) {
            let ma = DiscreteMass::normalized(a.iter().map(|x| x.0).collect(), a.iter().map(|x| x.1).collect()).unwrap();
            let mb = DiscreteMass::normalized(b.iter().map(|x| x.0).collect(), b.iter().map(|x| x.1).collect()).unwrap();
            let q = emd_1d_exact(&ma, &mb);
            let c = cdf_integral(&ma, &mb);
            prop_assert!((q - c).abs() < 1e-9 * (1.0 + c), "{} vs {}", q, c);
        }

        #[test]
        fn w2_gradient_matches_finite_differences(
            a in proptest::collection::vec(-3.0f64..3.0, 1..8),
            b in proptest::collection::vec(-3.0f64..3.0, 1..8),
        ) {
            let (ma, mb) = (u(&a), u(&b));
            let v = wasserstein_1d(&ma, &mb, 2.0);
            let h = 1e-6;
            for i in 0..a.len() {
                let mut p = a.clone(); p[i] += h;
                let mut m = a.clone(); m[i] -= h;
                let fd = (wasserstein_1d(&u(&p), &mb, 2.0).value - wasserstein_1d(&u(&m), &mb, 2.0).value) / (2.0 * h);
                // a perturbation may reorder atoms; the cost is still C1 for p = 2
                prop_assert!((fd - v.grad_a[i]).abs() < 1e-5, "fd {} an {}", fd, v.grad_a[i]);
            }
        }
    }
}
