use super::QanetError;

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Logistic ranking loss on predicted scores `p1, p2` for items of true quality `s1, s2`.
/// Zero penalty is approached as the better item's score pulls ahead.
pub fn ranking_loss(p1: f64, p2: f64, s1: f64, s2: f64) -> Result<f64, QanetError> {
    if s1 == s2 {
        return Err(QanetError::TiedGroundTruth(s1));
    }
    Ok(if s1 > s2 { softplus(p2 - p1) } else { softplus(p1 - p2) })
}

/// `(d loss / d p1, d loss / d p2)`.
pub fn ranking_loss_grad(p1: f64, p2: f64, s1: f64, s2: f64) -> Result<(f64, f64), QanetError> {
    if s1 == s2 {
        return Err(QanetError::TiedGroundTruth(s1));
    }
    let (d1, d2) = if s1 > s2 {
        let g = sigmoid(p2 - p1);
        (-g, g)
    } else {
        let g = sigmoid(p1 - p2);
        (g, -g)
    };
    Ok((d1, d2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        assert!((ranking_loss(0.0, 0.0, 0.9, 0.3).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let l = ranking_loss(10.0, 0.0, 0.9, 0.3).unwrap();
        assert!((l - (-10f64).exp().ln_1p()).abs() < 1e-18);
        assert!((l - 4.5398899e-5).abs() < 1e-12);
        let big = ranking_loss(-50.0, 0.0, 0.9, 0.3).unwrap();
        assert!(big.is_finite() && (big - 50.0).abs() < 1e-12);
        assert!(ranking_loss(-1e308, 1e308, 0.9, 0.3).unwrap().is_infinite());
    }

    #[test]
    fn tie_is_an_error() {
        assert_eq!(ranking_loss(1.0, 2.0, 0.5, 0.5), Err(QanetError::TiedGroundTruth(0.5)));
        assert!(ranking_loss_grad(1.0, 2.0, 0.5, 0.5).is_err());
    }

    #[test]
    fn swap_symmetry_and_monotonicity() {
        for &(p1, p2) in &[(0.3, -1.2), (5.0, 4.0), (-7.0, 2.0)] {
            assert_eq!(ranking_loss(p1, p2, 0.8, 0.2).unwrap(), ranking_loss(p2, p1, 0.2, 0.8).unwrap());
        }
        let mut prev = f64::INFINITY;
        for k in -40..=40 {
            let l = ranking_loss(k as f64 * 0.5, 0.0, 1.0, 0.0).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn gradient_matches_difference_quotient() {
        let h = 1e-6;
        for &(p1, p2, s1, s2) in &[(0.1, 0.4, 0.9, 0.1), (2.0, -3.0, 0.1, 0.9)] {
            let (d1, d2) = ranking_loss_grad(p1, p2, s1, s2).unwrap();
            let n1 = (ranking_loss(p1 + h, p2, s1, s2).unwrap() - ranking_loss(p1 - h, p2, s1, s2).unwrap()) / (2.0 * h);
            let n2 = (ranking_loss(p1, p2 + h, s1, s2).unwrap() - ranking_loss(p1, p2 - h, s1, s2).unwrap()) / (2.0 * h);
            assert!((d1 - n1).abs() < 1e-8 && (d2 - n2).abs() < 1e-8);
        }
    }
}
